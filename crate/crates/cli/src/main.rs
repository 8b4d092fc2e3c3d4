use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = fav_cli::cli::Cli::parse();
    match fav_cli::cli::run(cli) {
        Ok(out) => {
            println!("{out}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
