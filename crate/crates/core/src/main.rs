fn main() {
    std::process::exit(stsfa::cli::run(std::env::args()));
}
