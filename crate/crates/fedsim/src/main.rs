fn main() {
    let code = fedsim::cli::main(std::env::args().collect());
    std::process::exit(code);
}
