use clap::Parser;

fn main() {
    let cli = fxgan::cli::Cli::parse();
    if let Err(e) = fxgan::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.category() as i32);
    }
}
