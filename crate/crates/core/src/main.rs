fn main() {
    std::process::exit(dynlab::cli::run(std::env::args_os()));
}
