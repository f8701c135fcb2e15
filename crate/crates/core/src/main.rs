fn main() {
    std::process::exit(reptransfer::cli::run_from_args(std::env::args_os()));
}
