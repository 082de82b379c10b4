fn main() {
    std::process::exit(philap::cli::run(std::env::args_os()));
}
