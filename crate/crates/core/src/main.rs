fn main() {
    std::process::exit(clipsum::cli::main_with_args(std::env::args_os()));
}
