//! All six subcommands in sequence against `examples/desk.toml`, writing into
//! a temporary directory. Equivalent to running the binary six times.

use segqa::cli::{cmd_build_dataset, cmd_eval, cmd_purify, cmd_recommend, cmd_report, cmd_train, RunContext};
use segqa::config::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let desk = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/desk.toml");
    let config = Config::load(Some(desk.as_ref()), &[])?;
    let out = std::env::temp_dir().join("segqa-end-to-end");
    let ctx = RunContext::new(config, out.clone());

    println!("{}", cmd_build_dataset(&ctx)?);
    println!("{}", cmd_train(&ctx)?);
    println!("{}", cmd_eval(&ctx)?);
    println!("{}", cmd_recommend(&ctx)?);
    println!("{}", cmd_purify(&ctx)?);
    println!("{}", cmd_report(&ctx)?);
    println!("artifacts in {}", out.display());
    Ok(())
}
