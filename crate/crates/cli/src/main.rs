use clap::Parser;

fn main() {
    let cli = sarvb_cli::Cli::parse();
    if let Err(e) = sarvb_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
