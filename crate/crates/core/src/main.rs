fn main() {
    std::process::exit(rexrank::cli::run(std::env::args_os()));
}
