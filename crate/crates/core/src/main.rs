fn main() {
    std::process::exit(sdebatch::cli::main_with_args(std::env::args_os()).into());
}
