use clap::Parser;
use pws_cli::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PWS_LOG", "warn")).init();
    std::process::exit(run(Cli::parse()));
}
