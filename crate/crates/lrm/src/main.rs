use clap::Parser;

fn main() {
    std::process::exit(lrm::cli::run(lrm::cli::Cli::parse()));
}
