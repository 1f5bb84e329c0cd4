use clap::Parser;

use pyramid_hybrid::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = cli::run(Cli::parse()) {
        eprintln!("phf: {e}");
        std::process::exit(e.exit_code());
    }
}
