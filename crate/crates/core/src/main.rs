fn main() {
    std::process::exit(horizon_nav::cli::run_cli(std::env::args_os()));
}
