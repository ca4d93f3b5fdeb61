use clap::Parser;

fn main() {
    let cli = photodepth_cli::Cli::parse();
    std::process::exit(photodepth_cli::run(cli));
}
