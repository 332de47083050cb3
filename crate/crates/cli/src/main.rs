use clap::Parser;

fn main() {
    let cli = dae_pgd_cli::Cli::parse();
    if let Err(e) = dae_pgd_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
