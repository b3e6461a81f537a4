use clap::Parser;

fn main() {
    let cli = exoed::cli::Cli::parse();
    let code = match exoed::cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
