use clap::Parser;

fn main() {
    std::process::exit(dsswave_cli::run(dsswave_cli::Cli::parse()));
}
