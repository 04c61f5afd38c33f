use bfr_cli::{run, Cli};
use clap::Parser;

fn main() {
    env_logger::init();
    std::process::exit(run(Cli::parse()));
}
