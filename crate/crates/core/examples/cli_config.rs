//! Loads a run configuration, applies overrides the way the `sarsr` binary
//! does, and reports the derived run directory and optimizer step counts.
//!
//! ```text
//! cargo run --example cli_config -- [config.toml] [extra sarsr flags...]
//! ```

use clap::Parser;
use sarsr::cli::{Cli, CommandKind, RunConfig};

fn main() -> sarsr::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let path = if args.first().is_some_and(|a| a.ends_with(".toml")) {
        args.remove(0)
    } else {
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk_scale.toml").to_string()
    };
    let file = RunConfig::load(path.as_ref())?;
    println!("{path}: hash {}", file.hash());

    let argv = ["sarsr", "protocol", "--config", &path]
        .into_iter()
        .map(String::from)
        .chain(args);
    let cli = Cli::try_parse_from(argv).map_err(|e| sarsr::Error::Config(e.to_string()))?;
    let cfg = cli.overrides.resolve(CommandKind::Protocol)?;
    let problems = cfg.violations(CommandKind::Protocol);
    if !problems.is_empty() {
        for p in problems {
            println!("invalid: {p}");
        }
        return Ok(());
    }
    println!(
        "run directory {}",
        cfg.output_root()
            .join(format!("protocol-{}", cfg.hash()))
            .display()
    );
    let opts = cfg.protocol_options(None, false);
    let n_train = (6.0 * cfg.data.n_per_class as f64 * cfg.data.train_fraction).round() as usize;
    println!(
        "{} families x {} losses, about {} SR optimizer steps for {n_train} training chips",
        opts.families.len(),
        opts.losses.len(),
        opts.total_steps(n_train)
    );
    print!("{}", cfg.to_toml()?);
    Ok(())
}
