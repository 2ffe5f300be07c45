fn main() {
    std::process::exit(survtest::cli::run(std::env::args_os()));
}
