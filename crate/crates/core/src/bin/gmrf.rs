use clap::Parser;
use gmrf_lattice::cli::{run, CliArgs};

fn main() {
    let args = CliArgs::parse();
    std::process::exit(run(args));
}
