use clap::Parser;
use otlab_cli::Cli;

fn main() {
    if let Err(e) = otlab_cli::run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
