fn main() {
    std::process::exit(structbayes::cli::main_with_args(std::env::args_os()));
}
