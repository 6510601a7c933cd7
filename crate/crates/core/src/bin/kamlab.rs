fn main() {
    std::process::exit(kam_core::cli::main_with_args(std::env::args_os()));
}
