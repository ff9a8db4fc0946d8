fn main() {
    std::process::exit(naign::cli::run(std::env::args().collect()));
}
