fn main() {
    std::process::exit(polmech::cli::run_command(std::env::args_os()));
}
