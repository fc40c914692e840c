//! Single-pass inference that classifies heads from their own attention and
//! rescales them before the output projection.

use headwise::model::{forward_logits, GateTensor, Model, ModelConfig, TokenSequence};
use headwise::modality::ModalityPartition;
use headwise::rescale::{forward_rescaled, GainPolicy, RescaleConfig};
use headwise::taxonomy::{Boundaries, HeadLabel, Thresholds};

fn main() -> headwise::Result<()> {
    let model = Model::random(ModelConfig::new(4, 4, 32, 40), 2)?;
    let ids: Vec<usize> = (0..24).map(|i| (i * 11 + 3) % 40).collect();
    let vision = 2..14;
    let seq = TokenSequence::with_vision_range(&model, ids, vision.clone())?;
    let cfg = RescaleConfig {
        partition: ModalityPartition::from_vision_range(24, vision)?,
        boundaries: Boundaries::new(2, 3),
        thresholds: Thresholds::new(0.55, 0.4)?,
        policy: GainPolicy::ClassConditioned { g_perc: 1.2, g_reas: 1.4 },
    };
    let out = forward_rescaled(&model, &seq, &cfg, false)?;
    for ((l, h), label) in out.classification.labels.indexed_iter() {
        if *label != HeadLabel::Unlabeled {
            println!("L{} H{}: S_v {:.3} -> {label} x{}", l + 1, h + 1, out.profile.get(l, h), out.gains.get(l, h));
        }
    }
    let base = forward_logits(&model, &seq, &GateTensor::ones(4, 4))?;
    let last = seq.len() - 1;
    let shift = (&out.logits.row(last) - &base.row(last)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    println!("largest last-position logit change {shift:.4}");

    let neutral = RescaleConfig { policy: GainPolicy::neutral(), ..cfg };
    let same = forward_rescaled(&model, &seq, &neutral, false)?;
    println!("neutral gains reproduce the plain pass: {}", same.logits == base);
    Ok(())
}
