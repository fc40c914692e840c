//! Label heads of a planted model under each published hyperparameter row
//! and under thresholds placed inside the planted gaps.

use headwise::bench::{generate_planted_model, in_gap_thresholds, mean_profile, planted_boundaries, PlantedSpec};
use headwise::model::ModelConfig;
use headwise::presets::Preset;
use headwise::taxonomy::{classification_counts, classify_heads, Boundaries};

fn main() -> headwise::Result<()> {
    let cfg = ModelConfig::new(12, 4, 32, 64);
    let pm = generate_planted_model(cfg, &PlantedSpec::banded(12, 4, 3))?;
    let profile = mean_profile(&pm.model, &pm.spec.layout, 8, 99)?;

    let b = planted_boundaries(&pm);
    let t = in_gap_thresholds(&pm);
    let c = classify_heads(&profile, &b, &t)?;
    let n = classification_counts(&c);
    println!(
        "in-gap (perc_last {}, reas_first {}, tau {:.2}/{:.2}): {} perception, {} reasoning, {} unlabeled",
        b.perc_last, b.reas_first, t.tau_perc, t.tau_reas, n.perception, n.reasoning, n.unlabeled
    );
    for (l, h) in c.heads_with(headwise::taxonomy::HeadLabel::Perception) {
        println!("  perception head L{} H{}  S_v {:.3}", l + 1, h + 1, profile.get(l, h));
    }

    for p in Preset::ALL {
        let v = p.values();
        let b = Boundaries::new(v.boundaries.perc_last, v.boundaries.reas_first);
        let c = classify_heads(&profile, &b, &v.thresholds)?;
        let n = classification_counts(&c);
        println!(
            "{p:>13}: {} perception, {} reasoning ({:.0}% functional)",
            n.perception,
            n.reasoning,
            100.0 * (n.fractions[0] + n.fractions[1])
        );
    }
    Ok(())
}
