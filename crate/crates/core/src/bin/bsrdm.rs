fn main() {
    std::process::exit(bsrdm::cli::run(std::env::args_os()));
}
