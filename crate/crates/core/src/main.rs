fn main() {
    std::process::exit(incident_core::cli::run(std::env::args_os()));
}
