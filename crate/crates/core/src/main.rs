fn main() {
    std::process::exit(zslforge::cli::main_with_args(std::env::args_os()));
}
