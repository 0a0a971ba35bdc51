fn main() {
    std::process::exit(obsblock::cli::main_with_args(std::env::args_os()));
}
