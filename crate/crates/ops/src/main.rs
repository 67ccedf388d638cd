fn main() {
    std::process::exit(ronda_ops::cli::main());
}
