fn main() {
    std::process::exit(hsolver::cli::run());
}
