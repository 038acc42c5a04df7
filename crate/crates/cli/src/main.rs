use clap::Parser;

fn main() {
    let cli = svgp_cli::Cli::parse();
    if let Err(e) = svgp_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
