//! Gate-gradient contribution map: which heads push the model towards its
//! prediction, per input and averaged over several.

use headwise::attribution::{aggregate_importance, gate_gradients, heatmap_csv, importance, rank_heads, Normalization};
use headwise::model::{forward_vanilla, Model, ModelConfig, TokenSequence};

fn main() -> headwise::Result<()> {
    let model = Model::random(ModelConfig::new(4, 4, 32, 30), 17)?;
    let mut grads = Vec::new();
    for k in 0..6usize {
        let ids: Vec<usize> = (0..14).map(|i| (i * 5 + k * 7) % 30).collect();
        let seq = TokenSequence::with_vision_range(&model, ids, 2..8)?;
        let pos = seq.len() - 1;
        let logits = forward_vanilla(&model, &seq)?;
        let row = logits.row(pos);
        let target = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        grads.push(gate_gradients(&model, &seq, pos, target)?);
    }
    let first = &grads[0];
    println!("input 1: loss {:.4}", first.loss);
    print!("{}", heatmap_csv(&first.signed, &first.signed.mapv(f64::abs)));
    let per_layer = importance(first, Normalization::LayerWise);
    println!("degenerate layers: {:?}", per_layer.degenerate_layers);

    let mean = aggregate_importance(&grads, Normalization::Global)?;
    println!("top heads over {} inputs:", grads.len());
    for (l, h) in rank_heads(&mean).into_iter().take(5) {
        println!("  L{} H{}  {:.3}", l + 1, h + 1, mean.normalized[[l, h]]);
    }
    Ok(())
}
