use clap::Parser;

fn main() {
    std::process::exit(nlfeat::cli::run(nlfeat::cli::Cli::parse()));
}
