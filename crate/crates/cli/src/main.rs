use clap::Parser;
use spinn_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            eprintln!("spinn: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
