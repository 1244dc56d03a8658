use clap::Parser;
use evops_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("evops: {e}");
        std::process::exit(e.exit_code());
    }
}
