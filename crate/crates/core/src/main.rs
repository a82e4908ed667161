fn main() {
    std::process::exit(mgf::cli::run(std::env::args_os()));
}
