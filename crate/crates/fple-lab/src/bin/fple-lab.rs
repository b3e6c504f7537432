fn main() {
    std::process::exit(fple_lab::cli::run_main());
}
