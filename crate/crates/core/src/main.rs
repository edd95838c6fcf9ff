fn main() {
    std::process::exit(lifted_bp::cli::run_cli(std::env::args_os()));
}
