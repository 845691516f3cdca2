fn main() {
    std::process::exit(rage::cli::run_cli(std::env::args_os()));
}
