fn main() {
    std::process::exit(pss_tune::cli::main_with_args(std::env::args_os()));
}
