fn main() {
    std::process::exit(istar::harness::cli::main_with_args(std::env::args_os()));
}
