fn main() {
    std::process::exit(sblab::cli::main_with_args(std::env::args_os()));
}
