use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = amr_core::cli::Cli::parse();
    std::process::exit(amr_core::cli::run(cli));
}
