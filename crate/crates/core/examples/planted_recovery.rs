//! Plant perception and reasoning heads, then check that the modality
//! ratio rule finds them again on fresh inputs.

use headwise::bench::{generate_planted_model, in_gap_thresholds, planted_boundaries, recover_planted_heads, PlantedSpec};
use headwise::model::ModelConfig;

fn main() -> headwise::Result<()> {
    let cfg = ModelConfig::new(6, 4, 32, 64);
    let (mut worst_p, mut worst_r) = (1.0f64, 1.0f64);
    for seed in 0..20 {
        let spec = PlantedSpec::banded(cfg.num_layers, cfg.num_heads, seed);
        let pm = generate_planted_model(cfg.clone(), &spec)?;
        let b = planted_boundaries(&pm);
        let t = in_gap_thresholds(&pm);
        let r = recover_planted_heads(&pm, &b, &t, 10, 1000 + seed)?;
        println!(
            "seed {seed:2}: {} perception / {} reasoning planted, precision {:.3} recall {:.3}, weighted F1 {:.3}",
            spec.perception.len(),
            spec.reasoning.len(),
            r.functional.precision,
            r.functional.recall,
            r.metrics.weighted_f1
        );
        worst_p = worst_p.min(r.functional.precision);
        worst_r = worst_r.min(r.functional.recall);
    }
    println!("worst precision {worst_p:.3}, worst recall {worst_r:.3}");
    Ok(())
}
