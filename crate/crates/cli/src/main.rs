use clap::Parser;

fn main() {
    let cli = wlcox_cli::Cli::parse();
    std::process::exit(wlcox_cli::run(&cli));
}
