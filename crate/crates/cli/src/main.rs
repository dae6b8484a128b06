use clap::Parser;

fn main() {
    let cli = sharpen_cli::Cli::parse();
    if let Err(e) = sharpen_cli::run(cli) {
        eprintln!("{}", sharpen_cli::error_line(&e));
        std::process::exit(sharpen_cli::exit_code(&e));
    }
}
