fn main() {
    std::process::exit(sadf::cli::run());
}
