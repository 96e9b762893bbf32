use clap::Parser;
use rerand_cli::{exit, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(exit::OK);
}
