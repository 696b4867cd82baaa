fn main() {
    std::process::exit(nsp_capacity::cli::run(std::env::args_os()));
}
