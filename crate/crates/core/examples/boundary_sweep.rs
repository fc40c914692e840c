//! Sweeps over planted models: layer boundaries scored against ground truth,
//! then gains scored by copy-task accuracy.

use headwise::bench::{
    boundary_sweep, brackets, gain_sweep, generate_planted_model, in_gap_thresholds, planted_boundaries, PlantedSpec,
    ProfiledModels,
};
use headwise::model::ModelConfig;

fn main() -> headwise::Result<()> {
    let cfg = ModelConfig::new(6, 4, 32, 64);
    let models = (0..3)
        .map(|s| generate_planted_model(cfg.clone(), &PlantedSpec::banded(6, 4, s)))
        .collect::<headwise::Result<Vec<_>>>()?;
    let profiled = ProfiledModels::new(&models, 8, 1)?;
    let layers: Vec<usize> = (1..=6).collect();
    let grid = boundary_sweep(&profiled, &in_gap_thresholds(&models[0]), &layers, &layers);
    print!("{}", grid.to_csv());
    let best = grid.best().expect("grid has scored cells");
    println!(
        "best perc_last {} reas_first {}; brackets every model: {}",
        best.x,
        best.y,
        models.iter().all(|m| brackets(m, best.x as usize, best.y as usize))
    );

    let copy = (0..2)
        .map(|s| {
            let spec = PlantedSpec {
                copy_task: true,
                ..PlantedSpec::banded(6, 4, 100 + s)
            };
            generate_planted_model(cfg.clone(), &spec)
        })
        .collect::<headwise::Result<Vec<_>>>()?;
    let b = planted_boundaries(&copy[0]);
    let t = in_gap_thresholds(&copy[0]);
    let gains = [1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
    let g = gain_sweep(&copy, &b, &t, 100, 5, &gains, &[1.0, 1.3]);
    println!("copy-task accuracy by g_perc (g_reas 1.0 | 1.3):");
    for (i, gp) in gains.iter().enumerate() {
        let s = |j| g.get(i, j).score.clone().unwrap_or(f64::NAN);
        println!("  {gp:.1}: {:.3} | {:.3}", s(0), s(1));
    }
    Ok(())
}
