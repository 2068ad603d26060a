fn main() {
    std::process::exit(relkal::cli::run_command(std::env::args_os()));
}
