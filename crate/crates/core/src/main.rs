fn main() {
    std::process::exit(secagent_eval::cli::run_cli(std::env::args_os()));
}
