fn main() {
    std::process::exit(cchbal::cli::run());
}
