fn main() {
    std::process::exit(capnet::cli::run(std::env::args_os()));
}
