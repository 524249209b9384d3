//! Generates the synthetic six-class ship set, writes it as class folders
//! and reads it back through the folder loader.
//!
//! ```text
//! cargo run --example generate_dataset -- [out_dir] [n_per_class] [seed]
//! ```

use std::path::PathBuf;

use sarsr::data::{
    export_dataset, generate_synthetic, label_histogram, load_dataset, split, SplitSpec, HR_SIZE,
};

fn main() -> sarsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_ships".into()));
    let n: usize = args.next().map_or(20, |s| s.parse().expect("n_per_class"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let samples = generate_synthetic(n, seed, 4)?;
    let manifest = export_dataset(
        &samples,
        &dir,
        Some(seed),
        Some(4),
        env!("CARGO_PKG_VERSION"),
    )?;
    println!(
        "wrote {} chips to {}: {:?}",
        manifest.total,
        dir.display(),
        manifest.counts
    );

    let loaded = load_dataset(&dir, HR_SIZE)?;
    for w in &loaded.warnings {
        println!("warning: {w}");
    }
    let (train, test) = split(
        &loaded.samples,
        &SplitSpec {
            seed,
            ..Default::default()
        },
    )?;
    println!("train {:?}", label_histogram(&train));
    println!("test  {:?}", label_histogram(&test));
    Ok(())
}
