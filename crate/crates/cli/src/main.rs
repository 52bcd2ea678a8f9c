use clap::Parser;

fn main() {
    let cli = cbmat_cli::config::Cli::parse();
    std::process::exit(cbmat_cli::run(cli));
}
