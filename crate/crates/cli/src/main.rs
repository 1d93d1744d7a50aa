use clap::Parser;
use p2pgrid_cli::Cli;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    p2pgrid_cli::run(Cli::parse())
}
