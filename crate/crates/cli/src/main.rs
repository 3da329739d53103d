use clap::Parser;
use layoutspace_cli::{render_json, run, Cli};

fn main() {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", render_json(&out.json));
            } else {
                println!("{}", out.text);
            }
            std::process::exit(out.exit_code);
        }
        Err(e) => {
            eprintln!("{}", render_json(&e.envelope()));
            std::process::exit(e.exit_code());
        }
    }
}
