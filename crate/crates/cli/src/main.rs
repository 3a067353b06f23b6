use acciturn::args::Cli;
use acciturn::commands;
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = commands::run(cli) {
        eprintln!("error: {:#}", failure.error);
        std::process::exit(failure.code);
    }
}
