use clap::Parser;
use fieldlabel_service::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(serde_json::Value::Null) => {}
        Ok(v) => println!("{}", serde_json::to_string_pretty(&v).expect("serializable")),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(1);
        }
    }
}
