use clap::Parser;

fn main() {
    let cli = tiltlab_cli::Cli::parse();
    std::process::exit(tiltlab_cli::run(cli));
}
