fn main() {
    std::process::exit(acksiege::cli::main_with_args(std::env::args_os()));
}
