use clap::Parser;
use taskcomm_cli::cli::{execute, Cli};
use taskcomm_cli::commands::exit_code;

fn main() {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => println!("{text}"),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}
