fn main() {
    std::process::exit(odim::cli::run(std::env::args_os()));
}
