use clap::Parser;

use lfalloc::cli::{run, Cli, EXIT_OK};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LFALLOC_LOG", "warn")).init();
    let code = match run(Cli::parse()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    std::process::exit(code);
}
