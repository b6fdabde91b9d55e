use clap::Parser;

fn main() {
    let cli = extremal_cli::Cli::parse();
    std::process::exit(extremal_cli::run(&cli));
}
