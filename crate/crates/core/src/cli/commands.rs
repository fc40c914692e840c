use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use super::config::{InputFile, Overrides, QuerySet, RunConfig, SweepAxis};
use super::{Command, Common, Switch, WithInput, WithModel};
use crate::attribution::{gate_gradients, heatmap_csv};
use crate::bench::{
    boundary_sweep, gain_sweep, generate_planted_model, in_gap_thresholds, planted_boundaries, reference_config,
    threshold_sweep, timing_harness, PlantedModel, PlantedSpec, ProfiledModels, SweepGrid, TimingConfig,
};
use crate::error::{Error, Result};
use crate::modality::{ratio_profile, ModalityPartition};
use crate::model::{io, model_forward, AttentionTrace, GateTensor, Model, ModelConfig, TokenSequence};
use crate::report::{bytes_hash, with_header};
use crate::rescale::{forward_rescaled, RescaleConfig};
use crate::taxonomy::{classification_report, classify_heads};

pub(super) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(c) => generate(&c),
        Command::Inspect(m) => inspect(&m),
        Command::Classify(i) => classify(&i),
        Command::Infer { args, rescale, trace } => infer(&args, rescale, trace),
        Command::Attribute { args, position, target } => attribute(&args, position, target),
        Command::Bench(m) => bench(&m),
        Command::Sweep(c) => sweep(&c),
    }
}

fn resolve(common: &Common, model_path: Option<&PathBuf>) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(base.apply(&Overrides {
        seed: common.seed,
        preset: common.preset,
        model_path: model_path.cloned(),
        out: common.out.clone(),
    }))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Loaded {
    model: Model,
    sha: String,
}

fn load_model(cfg: &RunConfig) -> Result<Loaded> {
    let path = cfg
        .model_path
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no model file: pass --model or set model_path".into()))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = io::decode(&bytes, path)?;
    Ok(Loaded {
        model,
        sha: bytes_hash(&bytes),
    })
}

/// Header plus a `# model-sha256:` line.
fn model_report(command: &str, cfg: &RunConfig, sha: &str, body: &str) -> String {
    with_header(command, &cfg.canonical(), &format!("# model-sha256: {sha}\n{body}"))
}

fn load_input(model: &Model, cfg: &RunConfig, path: &Path) -> Result<(TokenSequence, ModalityPartition)> {
    let input = InputFile::load(path)?;
    let n = input.tokens.len();
    let seq = TokenSequence::with_vision_range(model, input.tokens, input.vision.clone())?;
    let mut partition = ModalityPartition::from_vision_range(n, input.vision)?;
    if cfg.partition.queries == QuerySet::Generated {
        partition = partition.generated_only(cfg.partition.generated_start)?;
    }
    Ok((seq, partition))
}

fn prepare(args: &WithModel) -> Result<(RunConfig, Loaded)> {
    let cfg = resolve(&args.common, args.model.as_ref())?;
    let loaded = load_model(&cfg)?;
    cfg.validate(Some(loaded.model.num_layers()))?;
    Ok((cfg, loaded))
}

fn generate(common: &Common) -> Result<()> {
    let cfg = resolve(common, None)?;
    cfg.validate(None)?;
    let config = cfg.require_model()?;
    let mut spec = cfg.planted.clone().unwrap_or_default();
    spec.seed = cfg.seed;
    spec.validate(&config)?;
    let pm = generate_planted_model(config, &spec)?;
    let dir = out_dir(&cfg)?;
    let model_path = dir.join("model.hwm");
    io::save(&pm.model, &model_path)?;
    write(&dir.join("planted.json"), &(pm.manifest_json() + "\n"))?;
    println!(
        "wrote {} (sha256 {})",
        model_path.display(),
        bytes_hash(&io::encode(&pm.model))
    );
    println!(
        "planted: {} perception, {} reasoning, {} decoy heads",
        spec.perception.len(),
        spec.reasoning.len(),
        spec.decoy_visual.len() + spec.decoy_text.len()
    );
    Ok(())
}

fn inspect(args: &WithModel) -> Result<()> {
    let (cfg, loaded) = prepare(args)?;
    let c = &loaded.model.config;
    let mut body = String::new();
    writeln!(body, "num_layers = {}", c.num_layers).unwrap();
    writeln!(body, "num_heads = {}", c.num_heads).unwrap();
    writeln!(body, "d_model = {}", c.d_model).unwrap();
    writeln!(body, "d_k = {}", c.d_k()).unwrap();
    writeln!(body, "d_ff = {}", c.d_ff).unwrap();
    writeln!(body, "vocab_size = {}", c.vocab_size).unwrap();
    writeln!(body, "causal_mask = {}", c.causal_mask).unwrap();
    writeln!(body, "use_mlp = {}", c.use_mlp).unwrap();
    writeln!(body, "norm_eps = {:e}", c.norm_eps).unwrap();
    writeln!(body, "parameters = {}", loaded.model.num_parameters()).unwrap();
    let text = model_report("inspect", &cfg, &loaded.sha, &body);
    print!("{text}");
    if cfg.out.is_some() {
        write(&out_dir(&cfg)?.join("inspect.txt"), &text)?;
    }
    Ok(())
}

fn classify(args: &WithInput) -> Result<()> {
    let (cfg, loaded) = prepare(&args.base)?;
    let b = cfg.require_boundaries()?;
    let t = cfg.require_thresholds()?;
    let model = &loaded.model;
    let (seq, partition) = load_input(model, &cfg, &args.input)?;
    let gates = GateTensor::ones(model.num_layers(), model.num_heads());
    let (_, trace) = model_forward(model, &seq, &gates)?;
    let profile = ratio_profile(&trace, &partition)?;
    let classes = classify_heads(&profile, &b, &t)?;
    let dir = out_dir(&cfg)?;
    write(
        &dir.join("classification.csv"),
        &model_report("classify", &cfg, &loaded.sha, &classification_report(&profile, &classes, &b, &t)),
    )?;
    write(&dir.join("profile.csv"), &model_report("classify", &cfg, &loaded.sha, &profile.to_csv()))?;
    Ok(())
}

fn logits_csv(logits: &Array2<f64>) -> String {
    let mut out = String::from("position");
    for v in 0..logits.ncols() {
        write!(out, ",logit_{v}").unwrap();
    }
    out.push('\n');
    for (i, row) in logits.rows().into_iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, ",{v:.17e}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn topk_csv(logits: &Array2<f64>, k: usize) -> String {
    let mut out = String::from("position,rank,token,logit,prob\n");
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for (r, &tok) in order.iter().take(k).enumerate() {
            writeln!(out, "{i},{},{tok},{:.17e},{:.17e}", r + 1, row[tok], (row[tok] - max).exp() / z).unwrap();
        }
    }
    out
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    (0..row.len())
        .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
        .expect("non-empty vocabulary")
}

fn infer(args: &WithInput, rescale: Switch, dump_trace: bool) -> Result<()> {
    let (cfg, loaded) = prepare(&args.base)?;
    let model = &loaded.model;
    let rescale_cfg = match rescale {
        Switch::On => Some((cfg.require_boundaries()?, cfg.require_thresholds()?, cfg.require_policy()?)),
        Switch::Off => None,
    };
    if cfg.infer.top_k == 0 {
        return Err(Error::InvalidConfig("[infer] top_k must be positive".into()));
    }
    let (seq, partition) = load_input(model, &cfg, &args.input)?;
    let dir = out_dir(&cfg)?;
    let (logits, trace) = match rescale_cfg {
        Some((boundaries, thresholds, policy)) => {
            let rc = RescaleConfig {
                partition,
                boundaries,
                thresholds,
                policy,
            };
            let out = forward_rescaled(model, &seq, &rc, dump_trace)?;
            let mut body = String::from("layer,head,S_v,label,gain\n");
            for ((l, h), sv) in out.profile.visual.indexed_iter() {
                writeln!(
                    body,
                    "{},{},{sv:.17e},{},{}",
                    l + 1,
                    h + 1,
                    out.classification.get(l, h),
                    out.gains.get(l, h)
                )
                .unwrap();
            }
            write(&dir.join("gains.csv"), &model_report("infer", &cfg, &loaded.sha, &body))?;
            (out.logits, dump_trace.then(|| AttentionTrace::from_records(out.records)))
        }
        None => {
            let gates = GateTensor::ones(model.num_layers(), model.num_heads());
            let (logits, trace) = model_forward(model, &seq, &gates)?;
            (logits, dump_trace.then_some(trace))
        }
    };
    write(&dir.join("logits.csv"), &model_report("infer", &cfg, &loaded.sha, &logits_csv(&logits)))?;
    write(
        &dir.join("topk.csv"),
        &model_report("infer", &cfg, &loaded.sha, &topk_csv(&logits, cfg.infer.top_k)),
    )?;
    if let Some(t) = trace {
        t.dump_csv(&dir.join("trace"))?;
    }
    Ok(())
}

fn attribute(args: &WithInput, position: Option<usize>, target: Option<usize>) -> Result<()> {
    let (cfg, loaded) = prepare(&args.base)?;
    let model = &loaded.model;
    let (seq, _) = load_input(model, &cfg, &args.input)?;
    let pos = position.unwrap_or(seq.len() - 1);
    if pos >= seq.len() {
        return Err(Error::Bounds {
            what: "position",
            index: pos,
            len: seq.len(),
        });
    }
    if let Some(t) = target {
        if t >= model.config.vocab_size {
            return Err(Error::Bounds {
                what: "target",
                index: t,
                len: model.config.vocab_size,
            });
        }
    }
    let target = match target {
        Some(t) => t,
        None => {
            let gates = GateTensor::ones(model.num_layers(), model.num_heads());
            let (logits, _) = model_forward(model, &seq, &gates)?;
            let t = argmax(logits.row(pos));
            eprintln!("no --target given; using the predicted token {t} at position {pos}");
            t
        }
    };
    let g = gate_gradients(model, &seq, pos, target)?;
    let body = format!(
        "# position: {pos}\n# target: {target}\n# loss: {:.17e}\n{}",
        g.loss,
        heatmap_csv(&g.signed, &g.signed.mapv(f64::abs))
    );
    write(&out_dir(&cfg)?.join("heatmap.csv"), &model_report("attribute", &cfg, &loaded.sha, &body))
}

fn bench(args: &WithModel) -> Result<()> {
    let cfg = resolve(&args.common, args.model.as_ref())?;
    let (model, sha) = match (&cfg.model_path, &cfg.model) {
        (Some(_), _) => {
            let l = load_model(&cfg)?;
            (l.model, l.sha)
        }
        (None, m) => {
            let config = m.clone().unwrap_or_else(reference_config);
            cfg.validate(Some(config.num_layers))?;
            let model = Model::random(config, cfg.seed)?;
            let sha = bytes_hash(&io::encode(&model));
            (model, sha)
        }
    };
    cfg.validate(Some(model.num_layers()))?;
    let mut tc = TimingConfig::for_model(&model.config, cfg.bench.lengths.clone());
    tc.reps = cfg.bench.reps;
    tc.warmup = cfg.bench.warmup;
    tc.seed = cfg.seed;
    if let Some(b) = cfg.boundaries {
        tc.boundaries = b;
    }
    if let Some(t) = cfg.thresholds {
        tc.thresholds = t;
    }
    if let Some(p) = &cfg.policy {
        tc.policy = p.clone();
    }
    let report = timing_harness(&model, &tc)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for r in &report.rows {
        println!(
            "N={:<6} vanilla {:.3} ms  gated+ratio {:.3} ms  overhead {:+.2}%  paired {:+.2}%",
            r.n,
            r.vanilla.median * 1e3,
            r.gated.median * 1e3,
            100.0 * r.overhead,
            100.0 * r.paired_overhead
        );
    }
    let dir = out_dir(&cfg)?;
    let meta = format!(
        "# reps: {}\n# timer-resolution-ns: {}\n",
        report.reps, report.timer_resolution_ns
    );
    write(&dir.join("timing.csv"), &model_report("bench", &cfg, &sha, &(meta + &report.to_csv())))?;
    write(&dir.join("flops.csv"), &model_report("bench", &cfg, &sha, &report.flops_csv()))
}

fn sweep_models(cfg: &RunConfig, config: &ModelConfig, copy_task: bool) -> Result<Vec<PlantedModel>> {
    (0..cfg.sweep.models as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed + i;
            let mut spec = match &cfg.planted {
                Some(p) if !cfg.banded => p.clone(),
                Some(p) => {
                    let b = PlantedSpec::banded(config.num_layers, config.num_heads, seed);
                    PlantedSpec {
                        perception: b.perception,
                        reasoning: b.reasoning,
                        decoy_visual: b.decoy_visual,
                        decoy_text: b.decoy_text,
                        ..p.clone()
                    }
                }
                None => PlantedSpec::banded(config.num_layers, config.num_heads, seed),
            };
            spec.seed = seed;
            spec.copy_task |= copy_task;
            generate_planted_model(config.clone(), &spec)
        })
        .collect()
}

fn grid(values: &[f64], default: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
    if values.is_empty() {
        default()
    } else {
        values.to_vec()
    }
}

fn steps(lo: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9).collect()
}

fn sweep(common: &Common) -> Result<()> {
    let cfg = resolve(common, None)?;
    let config = cfg.model.clone().unwrap_or_else(|| ModelConfig::new(6, 4, 32, 64));
    let mut checked = cfg.clone();
    checked.model = Some(config.clone());
    checked.validate(None)?;
    if let Some(p) = &cfg.planted {
        p.validate(&config)?;
    }
    let axis = cfg.sweep.axis;
    let models = sweep_models(&cfg, &config, axis == SweepAxis::Gains)?;
    let boundaries = cfg.boundaries.unwrap_or_else(|| planted_boundaries(&models[0]));
    let thresholds = cfg.thresholds.unwrap_or_else(|| in_gap_thresholds(&models[0]));
    let l = config.num_layers;
    let grid: SweepGrid = match axis {
        SweepAxis::Boundaries => {
            let xs = grid(&cfg.sweep.x, || (1..=l).map(|v| v as f64).collect());
            let ys = grid(&cfg.sweep.y, || (1..=l).map(|v| v as f64).collect());
            let to_layers = |v: &[f64]| -> Result<Vec<usize>> {
                v.iter()
                    .map(|&x| {
                        if x >= 1.0 && x.fract() == 0.0 && x as usize <= l {
                            Ok(x as usize)
                        } else {
                            Err(Error::InvalidBoundaries(format!("{x} is not a layer in 1..={l}")))
                        }
                    })
                    .collect()
            };
            let (px, ry) = (to_layers(&xs)?, to_layers(&ys)?);
            let profiled = ProfiledModels::new(&models, cfg.sweep.inputs, cfg.seed)?;
            boundary_sweep(&profiled, &thresholds, &px, &ry)
        }
        SweepAxis::Thresholds => {
            let xs = grid(&cfg.sweep.x, || steps(0.3, 0.05, 14));
            let ys = grid(&cfg.sweep.y, || steps(0.0, 0.05, 7));
            let profiled = ProfiledModels::new(&models, cfg.sweep.inputs, cfg.seed)?;
            threshold_sweep(&profiled, &boundaries, &xs, &ys)
        }
        SweepAxis::Gains => {
            let xs = grid(&cfg.sweep.x, || steps(1.0, 0.1, 6));
            let ys = grid(&cfg.sweep.y, || steps(1.0, 0.1, 6));
            gain_sweep(&models, &boundaries, &thresholds, cfg.sweep.samples, cfg.seed, &xs, &ys)
        }
    };
    let mut body = String::new();
    match grid.best() {
        Some(c) => {
            let s = c.score.as_ref().copied().unwrap_or(f64::NAN);
            writeln!(body, "# best: {}={} {}={} score={s:.17e}", grid.x_name, c.x, grid.y_name, c.y).unwrap();
            println!("best {}={} {}={} score={s:.4}", grid.x_name, c.x, grid.y_name, c.y);
        }
        None => {
            writeln!(body, "# best: none").unwrap();
            eprintln!("warning: every sweep cell failed");
        }
    }
    body.push_str(&grid.to_csv());
    write(&out_dir(&cfg)?.join("sweep.csv"), &with_header("sweep", &cfg.canonical(), &body))
}
