fn main() {
    std::process::exit(syslens::cli::run(std::env::args_os()));
}
