fn main() {
    std::process::exit(lfekmp::cli::run());
}
