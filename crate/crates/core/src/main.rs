use clap::Parser;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = mimax::cli::Cli::parse();
    if let Err(e) = mimax::cli::dispatch(cli, &argv) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
