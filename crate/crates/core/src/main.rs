fn main() {
    std::process::exit(stochsep::cli::run(std::env::args_os()));
}
