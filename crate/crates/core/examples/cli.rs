//! Drives the command-line front end in-process.
//!
//!     cargo run --example cli -- capacity --kappa -1 --level 3f

fn main() {
    let mut args: Vec<String> = std::env::args().collect();
    if args.len() == 1 {
        args.extend(["reproduce", "--table", "3"].map(String::from));
    }
    std::process::exit(nsp_capacity::cli::run(args));
}
