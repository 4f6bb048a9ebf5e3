//! Load a run configuration, apply dotted overrides and print the resolved TOML.
//!
//! `cargo run --example config_overrides -- [config.toml] [key=value ...]`

use mvitac::config::{Profile, RunConfig};

fn main() -> mvitac::Result<()> {
    let mut args = std::env::args().skip(1).peekable();
    let mut cfg = match args.peek() {
        Some(a) if !a.contains('=') => RunConfig::load(std::path::Path::new(&args.next().unwrap()), Profile::Desk)?,
        _ => RunConfig::for_profile(Profile::Desk),
    };
    for assignment in args {
        cfg.set(&assignment)?;
    }
    print!("{}", cfg.resolve()?.to_toml()?);
    Ok(())
}
