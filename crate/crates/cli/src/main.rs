use clap::Parser;
use t1map_cli::{run, Cli, EXIT_OK};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("T1MAP_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("t1map: {e}");
            e.code
        }
    };
    std::process::exit(code);
}
