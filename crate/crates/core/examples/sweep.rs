//! Runs the full protocol for a benchmark and prints the error tables.
//!
//! ```text
//! cargo run --release -p sde-opinf --example sweep -- heat1d [L_subspace]
//! ```

use sde_opinf::bench::experiment::{BenchmarkKind, ExperimentConfig};
use sde_opinf::bench::{metrics::format_metric, run_experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind = match args.next().as_deref() {
        Some("heat2d") => BenchmarkKind::Heat2d,
        Some("ou") => BenchmarkKind::Ou,
        _ => BenchmarkKind::Heat1d,
    };
    let mut cfg = ExperimentConfig::new(kind);
    if let Some(l) = args.next() {
        cfg.subspace.paths = l.parse()?;
    }
    if let Some(l) = args.next() {
        cfg.training.paths = l.split(',').map(str::parse).collect::<Result<_, _>>()?;
    }
    let start = std::time::Instant::now();
    let out = run_experiment(&cfg)?;
    let rep = &out.report;
    println!("{}: {:.1?}", out.fom.label, start.elapsed());
    println!(
        "||E||_F = {:.4}, ||C||_F = {:.4}",
        rep.subspace_mean_norm, rep.subspace_cov_norm
    );
    for (name, table) in rep.metric_tables() {
        println!("{name}  r  {}", rep.methods.join("  "));
        for (r, row) in rep.dims.iter().zip(table.iter()) {
            let cells: Vec<String> = row.iter().map(|m| format_metric(*m)).collect();
            println!("  {r:2} {}", cells.join("  "));
        }
    }
    println!("{}", rep.noise_dims_csv());
    Ok(())
}
