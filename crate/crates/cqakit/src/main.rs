use clap::Parser;

fn main() {
    let cli = cqakit::cli::Cli::parse();
    if let Err(e) = cqakit::cli::run(cli) {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(1);
    }
}
