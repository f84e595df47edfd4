use clap::Parser;

fn main() {
    let cli = hspde_cli::Cli::parse();
    std::process::exit(hspde_cli::run(&cli));
}
