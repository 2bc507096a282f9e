fn main() {
    std::process::exit(tdt_cli::run_command(std::env::args_os()));
}
