use clap::Parser;

fn main() {
    let cli = discrep::cli::Cli::parse();
    std::process::exit(discrep::cli::run(cli));
}
