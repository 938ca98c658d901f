fn main() {
    std::process::exit(domixt::cli::run());
}
