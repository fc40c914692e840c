//! Run one gated forward pass, look at the recorded attention and dump it.

use headwise::modality::{ratio_profile, ModalityPartition};
use headwise::model::{model_forward, GateTensor, Model, ModelConfig, TokenSequence};

fn main() -> headwise::Result<()> {
    let model = Model::random(ModelConfig::new(3, 4, 32, 50), 11)?;
    let ids: Vec<usize> = (0..16).map(|i| (i * 13 + 5) % 50).collect();
    let seq = TokenSequence::with_vision_range(&model, ids, 3..9)?;
    let (logits, trace) = model_forward(&model, &seq, &GateTensor::ones(3, 4))?;
    trace.check_complete()?;
    println!("logits {:?}, {} layers x {} heads of {}x{} attention", logits.dim(), trace.num_layers(), trace.num_heads(), trace.seq_len(), trace.seq_len());
    println!("worst row-sum deviation {:.2e}", trace.max_row_sum_deviation());
    let a = &trace.attention[0][0];
    println!("layer 1 head 1, last query row:");
    for (j, p) in a.row(a.nrows() - 1).iter().enumerate() {
        let tag = if (3..9).contains(&j) { "v" } else { "t" };
        println!("  key {j:2} [{tag}] {p:.4}");
    }
    let profile = ratio_profile(&trace, &ModalityPartition::from_sequence(&seq)?)?;
    print!("{}", profile.to_csv());
    let dir = std::env::temp_dir().join("headwise-trace");
    trace.dump_csv(&dir)?;
    println!("trace written to {}", dir.display());
    Ok(())
}
