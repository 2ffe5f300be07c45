//! Dataset files and result documents.
//!
//! A dataset is a delimited file with a header row: a time column, a 0/1
//! status column and one integer column per factor whose levels are exactly
//! `1..L`. Groups are formed lexicographically over the factor columns in the
//! order given.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{single_test, TestConfig, TestResult, WeightLaw};
use crate::contrasts::{build_hypothesis, split_rows, ContrastMatrix, Factor, FactorialDesign, HypothesisKind};
use crate::engine::SurvivalSample;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::multiple::{mctest, MCTestResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub time_col: String,
    pub status_col: String,
    /// Factor columns; empty means a `group` column, or inferred factors.
    pub factors: Vec<String>,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Self { time_col: "time".into(), status_col: "status".into(), factors: Vec::new(), delimiter: b',' }
    }
}

/// Most levels a column may have to be picked up as a factor automatically.
pub const MAX_INFERRED_LEVELS: usize = 10;

/// Factor columns used when the schema names none: a `group` column if there
/// is one, otherwise every column (besides time and status) whose values are
/// exactly the integers `1..=L` for some `2 <= L <=` [`MAX_INFERRED_LEVELS`].
fn infer_factors(headers: &csv::StringRecord, records: &[csv::StringRecord], schema: &Schema) -> Result<Vec<String>> {
    if headers.iter().any(|h| h == "group") {
        return Ok(vec!["group".into()]);
    }
    let found: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != schema.time_col && *h != schema.status_col)
        .filter(|&(c, _)| {
            let mut seen = BTreeSet::new();
            for rec in records {
                match rec.get(c).and_then(|v| v.parse::<usize>().ok()) {
                    Some(l) if (1..=MAX_INFERRED_LEVELS).contains(&l) => {
                        seen.insert(l);
                    }
                    _ => return false,
                }
            }
            seen.len() >= 2 && seen.len() == *seen.iter().next_back().unwrap_or(&0)
        })
        .map(|(_, h)| h.to_string())
        .collect();
    if found.is_empty() {
        return Err(Error::Header("no `group` column and no factor columns recognised; name them with --factors".into()));
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample: SurvivalSample,
    pub design: FactorialDesign,
}

impl Dataset {
    pub fn group_counts(&self) -> Vec<usize> {
        self.sample.group_counts()
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_dataset(File::open(path)?, schema)
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(schema.delimiter).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Header(format!("missing column `{name}` (have: {})", headers.iter().collect::<Vec<_>>().join(", "))))
    };
    let tcol = column(&schema.time_col)?;
    let scol = column(&schema.status_col)?;
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    let fnames = if schema.factors.is_empty() { infer_factors(&headers, &records, schema)? } else { schema.factors.clone() };
    let fcols = fnames.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;

    let mut times = Vec::new();
    let mut status = Vec::new();
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let err = |message: String| Error::Schema { row, message };

        let t: f64 = field(tcol).parse().map_err(|_| err(format!("time {:?} is not a number", field(tcol))))?;
        if !(t.is_finite() && t > 0.0) {
            return Err(err(format!("time {t} must be positive and finite")));
        }
        let d = match field(scol) {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("status {other:?} must be 0 or 1"))),
        };
        let mut lv = Vec::with_capacity(fcols.len());
        for (name, &c) in fnames.iter().zip(&fcols) {
            let l: usize = field(c)
                .parse()
                .ok()
                .filter(|&l| l >= 1)
                .ok_or_else(|| err(format!("level {:?} of `{name}` is not a positive integer", field(c))))?;
            lv.push(l);
        }
        times.push(t);
        status.push(d);
        levels.push(lv);
    }
    if times.is_empty() {
        return Err(Error::Header("file has no data rows".into()));
    }

    let mut factors = Vec::with_capacity(fnames.len());
    for (f, name) in fnames.iter().enumerate() {
        let seen: BTreeSet<usize> = levels.iter().map(|l| l[f]).collect();
        let max = *seen.iter().next_back().expect("nonempty");
        if seen.len() != max {
            let missing: Vec<String> = (1..=max).filter(|l| !seen.contains(l)).map(|l| l.to_string()).collect();
            let row = levels.iter().position(|l| l[f] == max).map_or(0, |i| i + 1);
            return Err(Error::Schema {
                row,
                message: format!("level gap in `{name}`: level {max} used but level(s) {} absent", missing.join(", ")),
            });
        }
        factors.push(Factor::new(name.clone(), max));
    }
    let design = FactorialDesign::new(factors)?;
    let groups = levels.iter().map(|l| design.group_index(l)).collect::<Result<Vec<_>>>()?;
    let sample = SurvivalSample::new(times, status, groups, design.k())?.with_kernel_labels(design.kernel_labels())?;
    Ok(Dataset { sample, design })
}

pub fn write_dataset<W: Write>(writer: W, sample: &SurvivalSample, design: &FactorialDesign) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(design.factors().iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for i in 0..sample.n() {
        let mut rec = vec![sample.times()[i].to_string(), (sample.status()[i] as u8).to_string()];
        rec.extend(design.level_tuple(sample.groups()[i]).iter().map(|l| l.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// User-supplied contrast, as read from a JSON contrasts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub label: String,
    pub rows: Vec<Vec<f64>>,
}

pub fn load_contrasts(path: impl AsRef<Path>) -> Result<Vec<ContrastSpec>> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

/// Everything needed to reproduce a `test` or `mctest` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: Schema,
    pub hypotheses: Vec<String>,
    #[serde(default)]
    pub contrasts: Vec<ContrastSpec>,
    pub kernel: String,
    pub rescale_times: bool,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub weights: WeightLaw,
}

impl RunConfig {
    pub fn test_config(&self) -> Result<TestConfig> {
        let kernel: KernelSpec = self.kernel.parse()?;
        Ok(TestConfig {
            kernel: kernel.with_rescale(self.rescale_times),
            reps: self.reps,
            alpha: self.alpha,
            seed: self.seed,
            weights: self.weights,
        })
    }

    /// Contrast matrices named by `hypotheses` followed by explicit `contrasts`.
    pub fn contrast_matrices(&self, design: &FactorialDesign) -> Result<Vec<ContrastMatrix>> {
        let mut out = Vec::new();
        for h in &self.hypotheses {
            let kind: HypothesisKind = h.parse()?;
            out.push(build_hypothesis(design, &kind)?);
        }
        for c in &self.contrasts {
            out.push(ContrastMatrix::from_rows(&c.rows, c.label.clone())?);
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no hypothesis given".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunOutcome {
    Test { results: Vec<TestResult> },
    Mctest { result: MCTestResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub software: String,
    pub version: String,
    pub config: RunConfig,
    pub groups: Vec<GroupSummary>,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub size: usize,
    pub events: usize,
}

fn group_summaries(ds: &Dataset) -> Vec<GroupSummary> {
    let counts = ds.group_counts();
    let mut events = vec![0; ds.sample.k()];
    for (&g, &d) in ds.sample.groups().iter().zip(ds.sample.status()) {
        events[g] += d as usize;
    }
    (0..ds.sample.k())
        .map(|g| GroupSummary { group: ds.design.group_label(g), size: counts[g], events: events[g] })
        .collect()
}

fn document(config: &RunConfig, ds: &Dataset, outcome: RunOutcome) -> ResultDocument {
    ResultDocument {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        groups: group_summaries(ds),
        outcome,
    }
}

/// One global test per hypothesis.
pub fn run_test(config: &RunConfig) -> Result<ResultDocument> {
    let ds = load_dataset(&config.data, &config.schema)?;
    let cfg = config.test_config()?;
    let results = config
        .contrast_matrices(&ds.design)?
        .iter()
        .map(|c| single_test(&ds.sample, c, &cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(document(config, &ds, RunOutcome::Test { results }))
}

/// Multiple-contrast run. A single hypothesis is split into its rows;
/// several hypotheses are used as the local hypotheses directly.
pub fn run_mctest(config: &RunConfig) -> Result<ResultDocument> {
    let ds = load_dataset(&config.data, &config.schema)?;
    let cfg = config.test_config()?;
    let mut cs = config.contrast_matrices(&ds.design)?;
    if cs.len() == 1 {
        cs = split_rows(&cs[0]);
    }
    let result = mctest(&ds.sample, &cs, &cfg)?;
    Ok(document(config, &ds, RunOutcome::Mctest { result }))
}

/// Re-run the recorded configuration.
pub fn replay(doc: &ResultDocument) -> Result<ResultDocument> {
    match doc.outcome {
        RunOutcome::Test { .. } => run_test(&doc.config),
        RunOutcome::Mctest { .. } => run_mctest(&doc.config),
    }
}

pub fn write_json<W: Write>(mut w: W, doc: &ResultDocument) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, doc)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json(path: impl AsRef<Path>) -> Result<ResultDocument> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

/// Aligned plain-text rendering.
pub fn render_text(doc: &ResultDocument) -> String {
    let mut out = String::new();
    let cfg = &doc.config;
    out.push_str(&format!(
        "kernel {}  rescale {}  M = {}  alpha = {}  seed = {}  weights {}\n",
        cfg.kernel,
        if cfg.rescale_times { "on" } else { "off" },
        cfg.reps,
        cfg.alpha,
        cfg.seed,
        cfg.weights
    ));
    let rows: Vec<[String; 5]> = match &doc.outcome {
        RunOutcome::Test { results } => results
            .iter()
            .map(|r| {
                [
                    r.hypothesis.clone(),
                    format!("{:.6}", r.statistic),
                    format!("{:.6}", r.critical_value),
                    format!("{:.4}", 100.0 * r.p_value),
                    if r.reject { "reject" } else { "accept" }.into(),
                ]
            })
            .collect(),
        RunOutcome::Mctest { result } => {
            out.push_str(&format!("beta_hat = {:.4}%\n", 100.0 * result.beta_hat));
            result
                .local
                .iter()
                .map(|r| {
                    [
                        r.hypothesis.clone(),
                        format!("{:.6}", r.statistic),
                        format!("{:.6}", r.critical_value),
                        format!("{:.4}", 100.0 * r.p_value),
                        if r.reject { "reject" } else { "accept" }.into(),
                    ]
                })
                .collect()
        }
    };
    let header = ["hypothesis", "statistic", "critical", "p-value(%)", "decision"];
    let width: Vec<usize> =
        (0..5).map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0)).collect();
    let line = |cells: [&str; 5]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            let pad = width[c] - cell.chars().count();
            if c == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    out.push_str(&line(header));
    for r in &rows {
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3], &r[4]]));
    }
    out
}

/// One CSV row per hypothesis.
pub fn write_result_csv<W: Write>(writer: W, doc: &ResultDocument) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["hypothesis", "statistic", "critical_value", "p_value", "reject"])?;
    let mut put = |h: &str, s: f64, c: f64, p: f64, r: bool| w.write_record([h.to_string(), s.to_string(), c.to_string(), p.to_string(), r.to_string()]);
    match &doc.outcome {
        RunOutcome::Test { results } => {
            for r in results {
                put(&r.hypothesis, r.statistic, r.critical_value, r.p_value, r.reject)?;
            }
        }
        RunOutcome::Mctest { result } => {
            for r in &result.local {
                put(&r.hypothesis, r.statistic, r.critical_value, r.p_value, r.reject)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(factors: &[&str]) -> Schema {
        Schema { factors: factors.iter().map(|s| s.to_string()).collect(), ..Schema::default() }
    }

    #[test]
    fn parses_two_factor_file() {
        let text = "time,status,a,b\n1.5,1,1,2\n2,0,2,1\n3,1,2,2\n0.5,1,1,1\n";
        let ds = read_dataset(text.as_bytes(), &schema(&["a", "b"])).unwrap();
        assert_eq!(ds.design.k(), 4);
        assert_eq!(ds.sample.groups(), &[1, 2, 3, 0]);
        assert_eq!(ds.sample.status(), &[true, false, true, true]);
    }

    #[test]
    fn infers_factor_columns() {
        // `age` has too many levels, `prior` starts at 0, `one` has a single level.
        let text = "time,status,trt,age,prior,one,cell\n1,1,1,40,0,1,1\n2,0,2,61,10,1,3\n3,1,1,55,0,1,2\n4,1,2,70,0,1,1\n5,1,1,12,0,1,1\n6,1,1,13,0,1,1\n7,1,1,14,0,1,1\n8,1,1,15,0,1,1\n9,1,1,16,0,1,1\n10,1,1,17,0,1,1\n11,1,1,18,0,1,1\n";
        let ds = read_dataset(text.as_bytes(), &Schema::default()).unwrap();
        let names: Vec<&str> = ds.design.factors().iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["trt", "cell"]);
        assert_eq!(ds.design.k(), 6);
        let with_group = "time,status,trt,group\n1,1,1,1\n2,1,2,2\n";
        let ds = read_dataset(with_group.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(ds.design.factors()[0].name, "group");
        assert!(read_dataset("time,status,x\n1,1,7\n".as_bytes(), &Schema::default()).unwrap_err().is_schema());
    }

    #[test]
    fn bad_status_names_row() {
        let text = "time,status,group\n1,1,1\n2,2,2\n";
        match read_dataset(text.as_bytes(), &Schema::default()) {
            Err(Error::Schema { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("status"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn level_gap_rejected() {
        let text = "time,status,group\n1,1,1\n2,1,3\n";
        let e = read_dataset(text.as_bytes(), &Schema::default()).unwrap_err();
        assert!(e.is_schema());
        assert!(e.to_string().contains("level gap"));
    }

    #[test]
    fn other_schema_errors() {
        let s = Schema::default();
        assert!(read_dataset("time,status\n1,1\n".as_bytes(), &s).unwrap_err().is_schema());
        assert!(read_dataset("time,status,group\n0,1,1\n".as_bytes(), &s).unwrap_err().is_schema());
        assert!(read_dataset("time,status,group\nx,1,1\n".as_bytes(), &s).unwrap_err().is_schema());
        assert!(read_dataset("time,status,group\n1,1,0\n".as_bytes(), &s).unwrap_err().is_schema());
        assert!(read_dataset("time,status,group\n".as_bytes(), &s).unwrap_err().is_schema());
    }

    #[test]
    fn round_trip() {
        let design = FactorialDesign::new(vec![Factor::new("x", 2), Factor::new("y", 2)]).unwrap();
        let sample = SurvivalSample::new(vec![0.1 + 0.2, 1e-7, 3.0, 12345.678], vec![true, false, true, true], vec![0, 1, 2, 3], 4)
            .unwrap()
            .with_kernel_labels(design.kernel_labels())
            .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &sample, &design).unwrap();
        let ds = read_dataset(buf.as_slice(), &schema(&["x", "y"])).unwrap();
        assert_eq!(ds.sample, sample);
        assert_eq!(ds.design, design);
    }
}
