fn main() {
    std::process::exit(lic::cli::run(std::env::args_os()));
}
