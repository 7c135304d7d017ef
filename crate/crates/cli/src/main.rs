use clap::Parser;
use hdb_bidder::commands::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e.chain().map(ToString::to_string).collect::<Vec<_>>().join(": "));
        std::process::exit(1);
    }
}
