use clap::Parser;

fn main() {
    let cli = xgrasp_cli::Cli::parse();
    if let Err(e) = xgrasp_cli::run(cli) {
        eprintln!("{}", e.diagnostic());
        std::process::exit(e.exit_code());
    }
}
