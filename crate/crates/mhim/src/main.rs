fn main() {
    std::process::exit(mhim::cli::run(std::env::args()));
}
