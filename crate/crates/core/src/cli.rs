//! Command-line front end. Exit codes: 0 success, 1 other failure, 2 schema
//! or usage error, 3 degenerate data (nothing to test).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bootstrap::WeightLaw;
use crate::contrasts::HypothesisKind;
use crate::engine::nelson_aalen;
use crate::error::{Error, Result};
use crate::io::{
    load_contrasts, load_dataset, render_text, run_mctest, run_test, write_dataset, write_json, write_result_csv,
    ResultDocument, RunConfig, Schema,
};
use crate::kernels::KernelSpec;
use crate::simulate::{
    generate_dataset, power_study, replicate_rng, Censoring, Design, Method, PowerStudy, ScenarioConfig, Sizes,
};

#[derive(Parser, Debug)]
#[command(name = "survtest", version, about = "Kernel log-rank tests for factorial survival designs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Global kernel log-rank test, one per hypothesis.
    Test(TestArgs),
    /// Multiple-contrast test over local hypotheses.
    Mctest(TestArgs),
    /// Draw one synthetic dataset.
    Simulate(SimulateArgs),
    /// Rejection rates over a grid of scenarios.
    Power(PowerArgs),
    /// Per-group Nelson–Aalen estimates as CSV.
    Curves(CurvesArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "status")]
    status_col: String,
    /// Comma-separated factor columns (default: `group`, else every column
    /// with levels 1..L, L <= 10).
    #[arg(long, value_delimiter = ',')]
    factors: Vec<String>,
}

impl DataArgs {
    fn schema(&self) -> Schema {
        Schema {
            time_col: self.time_col.clone(),
            status_col: self.status_col.clone(),
            factors: self.factors.clone(),
            ..Schema::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// main-effect:<factor>, effect:<factor>, interaction, dunnett or tukey; repeatable.
    #[arg(long)]
    hypothesis: Vec<String>,
    /// JSON file with a list of {"label", "rows"} contrasts.
    #[arg(long)]
    contrasts: Option<PathBuf>,
    /// K1..K5 or se:<l2>|ou:<sigma> followed by ,rq:<a>:<b>|,id.
    #[arg(long, default_value = "se:0.1,rq:2:1")]
    kernel: String,
    #[arg(long, value_enum, default_value = "on")]
    rescale_times: OnOff,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "rademacher")]
    weights: String,
    /// Write the result here (format from --format, default json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; stdout defaults to text, --out to json.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    design: String,
    /// Interaction parameter for design C (overrides `C:<theta>`).
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value = "low")]
    censoring: String,
    /// balanced:<n>, unbalanced:<multiplier> or n1,n2,...
    #[arg(long, default_value = "balanced:50")]
    sizes: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PowerArgs {
    /// Repeatable; A, B, C or C:<theta>.
    #[arg(long, required = true)]
    design: Vec<String>,
    /// Values of theta forming a grid for design C.
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "low")]
    censoring: Vec<String>,
    /// Size specifications separated by `;`.
    #[arg(long, value_delimiter = ';', default_value = "balanced:50")]
    grid: Vec<String>,
    /// Default: main-effect:I for A/B, interaction for C.
    #[arg(long)]
    hypothesis: Option<String>,
    /// Kernels tested with the single global test; repeatable.
    #[arg(long)]
    kernel: Vec<String>,
    /// Kernels tested with the multiple-contrast procedure; repeatable.
    #[arg(long)]
    mc_kernel: Vec<String>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "rademacher")]
    weights: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `argv` (including the program name) and run, writing to stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => {
                let mut buf = Vec::new();
                let r = pool.install(|| dispatch(&cli.command, &mut buf));
                r.and_then(|()| Ok(out.write_all(&buf)?))
            }
            Err(e) => Err(Error::InvalidArgument(format!("cannot start {n} worker threads: {e}"))),
        },
        None => dispatch(&cli.command, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoEvents => 3,
        e if e.is_schema() => 2,
        _ => 1,
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Test(a) => emit_result(run_test(&run_config(a)?)?, a, out),
        Command::Mctest(a) => emit_result(run_mctest(&run_config(a)?)?, a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Power(a) => power(a, out),
        Command::Curves(a) => curves(a, out),
    }
}

fn run_config(a: &TestArgs) -> Result<RunConfig> {
    // Validate early so a bad kernel is reported before loading data.
    a.kernel.parse::<KernelSpec>()?;
    Ok(RunConfig {
        data: a.data.data.clone(),
        schema: a.data.schema(),
        hypotheses: a.hypothesis.clone(),
        contrasts: match &a.contrasts {
            Some(p) => load_contrasts(p)?,
            None => Vec::new(),
        },
        kernel: a.kernel.clone(),
        rescale_times: a.rescale_times == OnOff::On,
        reps: a.reps,
        alpha: a.alpha,
        seed: a.seed,
        weights: a.weights.parse()?,
    })
}

fn write_doc(w: &mut dyn Write, doc: &ResultDocument, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(w, doc),
        Format::Text => Ok(w.write_all(render_text(doc).as_bytes())?),
        Format::Csv => write_result_csv(w, doc),
    }
}

fn emit_result(doc: ResultDocument, a: &TestArgs, out: &mut dyn Write) -> Result<()> {
    match &a.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_doc(&mut w, &doc, a.format.unwrap_or(Format::Json))?;
            w.flush()?;
            write_doc(out, &doc, Format::Text)
        }
        None => write_doc(out, &doc, a.format.unwrap_or(Format::Text)),
    }
}

fn sink<'a>(path: &Option<PathBuf>, out: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(out),
    })
}

fn parse_design(s: &str, theta: Option<f64>) -> Result<Design> {
    let d: Design = s.parse()?;
    Ok(match (d, theta) {
        (Design::C { .. }, Some(t)) => Design::C { theta: t },
        (d, _) => d,
    })
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let design = parse_design(&a.design, a.theta)?;
    // Validate θ and sizes before drawing.
    design.hazards()?;
    let config = ScenarioConfig::new(design, a.sizes.parse()?, a.censoring.parse()?);
    let sample = generate_dataset(&config, &mut replicate_rng(a.seed, 0, 0))?;
    let mut w = sink(&a.out, out)?;
    write_dataset(&mut w, &sample, &design.factorial())?;
    w.flush()?;
    Ok(())
}

fn power(a: &PowerArgs, out: &mut dyn Write) -> Result<()> {
    let mut designs = Vec::new();
    for d in &a.design {
        let d: Design = d.parse()?;
        match d {
            Design::C { .. } if !a.theta.is_empty() => {
                for &t in &a.theta {
                    designs.push(parse_design("C", Some(t))?);
                }
            }
            d => designs.push(d),
        }
    }
    let censorings = a.censoring.iter().map(|c| c.parse()).collect::<Result<Vec<Censoring>>>()?;
    let sizes = a.grid.iter().map(|s| s.parse()).collect::<Result<Vec<Sizes>>>()?;

    let mut methods = Vec::new();
    let kernels: Vec<String> = if a.kernel.is_empty() && a.mc_kernel.is_empty() {
        (1..=5).map(|i| format!("K{i}")).collect()
    } else {
        a.kernel.clone()
    };
    for k in &kernels {
        methods.push(Method::single(k.clone(), k.parse()?));
    }
    for k in &a.mc_kernel {
        methods.push(Method::multiple(format!("MC[{k}]"), k.parse()?));
    }

    let weights: WeightLaw = a.weights.parse()?;
    let mut w = sink(&a.out, out)?;
    let mut csv = csv::Writer::from_writer(&mut w);
    csv.write_record(["design", "censoring", "size-multiplier", "kernel", "rejection_rate", "mc_se"])?;
    // Designs may need different default hypotheses, so run one study per design.
    for (di, design) in designs.iter().enumerate() {
        let hypothesis: HypothesisKind = match &a.hypothesis {
            Some(h) => h.parse()?,
            None => match design {
                Design::C { .. } => HypothesisKind::Interaction,
                _ => HypothesisKind::MainEffect("I".into()),
            },
        };
        let mut scenarios = Vec::new();
        for &c in &censorings {
            for s in &sizes {
                scenarios.push(ScenarioConfig::new(*design, s.clone(), c));
            }
        }
        let study = PowerStudy {
            scenarios,
            hypothesis,
            methods: methods.clone(),
            reps: a.reps,
            boot: a.boot,
            alpha: a.alpha,
            // Distinct streams per design in the grid.
            seed: a.seed.wrapping_add(di as u64),
            weights,
        };
        for row in power_study(&study)? {
            csv.write_record([
                row.design,
                row.censoring,
                row.size_multiplier,
                row.kernel,
                row.rejection_rate.to_string(),
                row.mc_se.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    drop(csv);
    w.flush()?;
    Ok(())
}

fn curves(a: &CurvesArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.data.data, &a.data.schema())?;
    let mut w = sink(&a.out, out)?;
    let mut csv = csv::Writer::from_writer(&mut w);
    csv.write_record(["group", "time", "cumulative_hazard"])?;
    for (g, f) in nelson_aalen(&ds.sample).iter().enumerate() {
        let label = ds.design.group_label(g);
        csv.write_record([label.clone(), "0".into(), "0".into()])?;
        for (t, v) in f.times.iter().zip(&f.values) {
            csv.write_record([label.clone(), t.to_string(), v.to_string()])?;
        }
    }
    csv.flush()?;
    drop(csv);
    w.flush()?;
    Ok(())
}
