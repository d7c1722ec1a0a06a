fn main() {
    std::process::exit(lnnchain::cli::run());
}
