use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = text2flow::cli::Cli::parse();
    std::process::exit(text2flow::cli::run(cli));
}
