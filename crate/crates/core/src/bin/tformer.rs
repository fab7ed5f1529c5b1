fn main() {
    std::process::exit(tformer::cli::main_with_args(std::env::args_os()));
}
