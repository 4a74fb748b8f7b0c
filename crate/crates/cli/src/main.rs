use clap::Parser;
use strictform::{exit_code, run, Cli};

fn main() {
    let result = run(Cli::parse());
    if let Err(e) = &result {
        eprintln!("strictform: {e}");
    }
    std::process::exit(exit_code(&result));
}
