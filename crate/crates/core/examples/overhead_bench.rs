//! Wall time of vanilla inference against single-pass identify-and-rescale
//! inference on the reference model.
//!
//! Run with `cargo run --release --example overhead_bench`.

use headwise::bench::{reference_config, timing_harness, TimingConfig};
use headwise::model::Model;

fn main() -> headwise::Result<()> {
    let model = Model::random(reference_config(), 0)?;
    let cfg = TimingConfig {
        reps: 41,
        ..TimingConfig::for_model(&model.config, vec![64, 128, 256, 512])
    };
    let report = timing_harness(&model, &cfg)?;
    print!("{}", report.to_csv());
    println!();
    print!("{}", report.flops_csv());
    let mut prev: Option<f64> = None;
    for row in &report.rows {
        if let Some(p) = prev {
            println!("N = {:4}: vanilla median x{:.2} over the previous length", row.n, row.vanilla.median / p);
        }
        prev = Some(row.vanilla.median);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
