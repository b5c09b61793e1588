fn main() {
    std::process::exit(nsamc::cli::run());
}
