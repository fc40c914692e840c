use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::forward::LayerRecord;
use crate::error::{Error, Result};

/// Materialized attention of one forward pass, indexed `[layer][head]` (0-based).
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace {
    pub attention: Vec<Vec<Array2<f64>>>,
    /// Ungated per-head outputs `A V`.
    pub head_outputs: Vec<Vec<Array2<f64>>>,
    pub layer_inputs: Vec<Array2<f64>>,
    pub layer_outputs: Vec<Array2<f64>>,
    /// Gated attention sublayer outputs (pre-residual).
    pub attn_outputs: Vec<Array2<f64>>,
}

impl AttentionTrace {
    pub(crate) fn from_records(records: Vec<LayerRecord>) -> Self {
        let mut t = AttentionTrace::default();
        for rec in records {
            let (att, outs): (Vec<_>, Vec<_>) = rec.heads.into_iter().map(|h| (h.attention, h.output)).unzip();
            t.attention.push(att);
            t.head_outputs.push(outs);
            t.layer_inputs.push(rec.input);
            t.layer_outputs.push(rec.output);
            t.attn_outputs.push(rec.attn_out);
        }
        t
    }

    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }

    pub fn num_heads(&self) -> usize {
        self.attention.first().map_or(0, Vec::len)
    }

    pub fn seq_len(&self) -> usize {
        self.attention
            .first()
            .and_then(|l| l.first())
            .map_or(0, |a| a.nrows())
    }

    /// Checks every layer carries the same number of square `N x N` matrices.
    pub fn check_complete(&self) -> Result<()> {
        let heads = self.num_heads();
        let n = self.seq_len();
        if self.attention.is_empty() || heads == 0 {
            return Err(Error::IncompleteTrace("no attention matrices recorded".into()));
        }
        for (l, layer) in self.attention.iter().enumerate() {
            if layer.len() != heads {
                return Err(Error::IncompleteTrace(format!(
                    "layer {} has {} heads, expected {}",
                    l + 1,
                    layer.len(),
                    heads
                )));
            }
            if let Some((h, _)) = layer.iter().enumerate().find(|(_, a)| a.dim() != (n, n)) {
                return Err(Error::IncompleteTrace(format!(
                    "attention at layer {}, head {} is not {n}x{n}",
                    l + 1,
                    h + 1
                )));
            }
        }
        Ok(())
    }

    /// Largest `|row sum - 1|` over every row of every matrix.
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.attention
            .iter()
            .flatten()
            .flat_map(|a| a.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Writes one CSV per (layer, head) plus `manifest.csv` into `dir`.
    /// File names and manifest indices are 1-based.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.csv");
        let mut manifest = String::from("layer,head,file,rows,cols,max_row_sum_dev\n");
        for (l, layer) in self.attention.iter().enumerate() {
            for (h, a) in layer.iter().enumerate() {
                let name = format!("attn_l{:02}_h{:02}.csv", l + 1, h + 1);
                let path = dir.join(&name);
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(file);
                let mut dev = 0.0f64;
                for row in a.rows() {
                    dev = dev.max((row.sum() - 1.0).abs());
                    let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                    writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(&path, e))?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                manifest.push_str(&format!("{},{},{},{},{},{:e}\n", l + 1, h + 1, name, a.nrows(), a.ncols(), dev));
            }
        }
        fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
    }
}
