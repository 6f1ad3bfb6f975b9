use clap::Parser;

fn main() {
    let args = rmflab_cli::Args::parse();
    if let Err(e) = rmflab_cli::run(&args) {
        eprintln!("rmflab: {e}");
        std::process::exit(e.exit_code());
    }
}
