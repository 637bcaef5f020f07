fn main() {
    std::process::exit(intcens::cli::run());
}
