fn main() {
    std::process::exit(dispersive_control::cli::run_cli());
}
