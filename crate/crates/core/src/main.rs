fn main() {
    std::process::exit(levy_filter::cli::main_with_args(std::env::args_os()));
}
