use clap::Parser;

use bevdg::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("bevdg: {err}");
        std::process::exit(exit_code(&err));
    }
}
