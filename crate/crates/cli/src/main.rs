use std::process::ExitCode;

use clap::Parser;
use styledyn_cli::{init_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| {
        let (cmd, overrides) = cli.command.split();
        let cfg = overrides.resolve()?;
        run(cmd, &cfg)
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("styledyn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
