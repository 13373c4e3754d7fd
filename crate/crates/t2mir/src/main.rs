use clap::Parser;

fn main() {
    let cli = t2mir::cli::Cli::parse();
    if let Err(err) = t2mir::cli::execute(cli) {
        eprintln!("error: {err}");
        std::process::exit(t2mir::cli::exit_code_for(&err));
    }
}
