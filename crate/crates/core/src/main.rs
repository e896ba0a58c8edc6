fn main() {
    std::process::exit(hierloss::cli::main());
}
