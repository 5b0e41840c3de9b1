fn main() {
    std::process::exit(pipekeeper_cli::run_cli(std::env::args_os()));
}
