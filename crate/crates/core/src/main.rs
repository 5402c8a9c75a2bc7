fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(ovlab::cli::run_cli(&args));
}
