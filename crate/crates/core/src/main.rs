fn main() {
    std::process::exit(qfuse::cli::main_with_args(std::env::args_os()));
}
