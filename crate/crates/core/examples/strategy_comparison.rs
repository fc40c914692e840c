//! The four alternative strategies against each other: the exact difference
//! between bipolar scaling and pure enhancement, and first-order alignment
//! changes over random task directions.

use headwise::bench::delta_ordering;
use headwise::model::{layer_forward, Model, ModelConfig, TokenSequence};
use headwise::rescale::{strategy_difference, GainPolicy, LabelSet};
use headwise::rng::SeededRng;
use headwise::taxonomy::{HeadClassification, HeadLabel};
use ndarray::{Array1, Array2};

fn main() -> headwise::Result<()> {
    let cfg = ModelConfig::new(1, 4, 16, 12).with_mlp(false);
    let model = Model::random(cfg.clone(), 4)?;
    let x = SeededRng::new(1).matrix(6, 16, 1.0);
    let rec = layer_forward(x.view(), &model.layers[0], Array1::ones(4).view(), &cfg)?;
    let outputs: Vec<Array2<f64>> = rec.heads.into_iter().map(|h| h.output).collect();
    let labels = [HeadLabel::Perception, HeadLabel::Unlabeled, HeadLabel::Reasoning, HeadLabel::Unlabeled];
    let a = GainPolicy::SelectiveEnhancement { alpha: 1.3, enhance: LabelSet::functional() };
    let c = GainPolicy::BipolarScaling { alpha: 1.3, beta: 0.6, enhance: LabelSet::functional() };
    let d = strategy_difference(&outputs, model.layers[0].w_o.view(), &labels, &a, &c)?;
    println!(
        "C - A: attenuated heads {:?}, deviation from (beta - 1) O W_O {:.2e}",
        d.attenuated_heads.iter().map(|h| h + 1).collect::<Vec<_>>(),
        d.max_abs_deviation
    );

    let model = Model::random(ModelConfig::new(3, 4, 16, 12), 6)?;
    let seq = TokenSequence::with_vision_range(&model, (0..10).collect(), 2..6)?;
    let mut grid = Array2::from_elem((3, 4), HeadLabel::Unlabeled);
    grid[[0, 0]] = HeadLabel::Perception;
    grid[[2, 1]] = HeadLabel::Reasoning;
    let r = delta_ordering(&model, &seq, &HeadClassification { labels: grid }, 1.3, 0.6, 1000, 8)?;
    println!(
        "mean alignment change over {} directions: A {:+.3}  B {:+.3}  C {:+.3}; A > 0 in {:.1}%",
        r.draws,
        r.mean_a,
        r.mean_b,
        r.mean_c,
        100.0 * r.frac_a_positive
    );
    Ok(())
}
