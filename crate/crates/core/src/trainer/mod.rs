//! Training loop, validation-driven post-processing selection and
//! inference exports.

mod data;
mod export;
mod optim;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use data::{Dataset, Example};
pub use export::{export_inference, load_features, save_embeddings, InferenceFiles};
pub use optim::{noam_lr, Adam};

use crate::error::{Error, Result};
use crate::eval::{binarize, der, ErrorTimes};
use crate::losses::{
    bce_cost_matrix, dia_bce_graph, existence_bce_graph, nll_graph, solve_pit, speaker_cost_matrix, LossWeights,
    PitMode, Reduction,
};
use crate::model::{Bound, Checkpoint, DecodeMode, EendModel, InferenceSettings};
use crate::simulator::recording_rng;
use crate::tensor::{Axis, Graph, Tensor, Var};
use crate::types::ActivityMatrix;

pub const DER_COLLAR: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Recordings per optimizer step.
    pub batch_size: usize,
    /// Gradient-accumulation multiplier on top of `batch_size`.
    pub accumulation: usize,
    pub warmup_steps: usize,
    /// Multiplies the warm-up schedule.
    pub lr_factor: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub reduction: Reduction,
    pub dia_pit: PitMode,
    pub spk_pit: PitMode,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    pub thresholds: Vec<f64>,
    pub median_windows: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1,
            accumulation: 1,
            warmup_steps: 200,
            lr_factor: 1.0,
            seed: 0,
            weights: LossWeights::default(),
            reduction: Reduction::Mean,
            dia_pit: PitMode::Hungarian,
            spk_pit: PitMode::sinkhorn_default(),
            eval_every: 10,
            thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            median_windows: vec![1, 3, 5, 7, 9, 11],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.batch_size == 0 || self.accumulation == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "warmup_steps, batch_size, accumulation and eval_every must be >= 1".into(),
            ));
        }
        if self.thresholds.is_empty() || self.median_windows.is_empty() {
            return Err(Error::Config("post-processing grid is empty".into()));
        }
        Ok(())
    }
}

/// Loss components as values, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub dia: f64,
    pub spk: f64,
    /// Stop-class CE with the speaker head, existence BCE without it.
    pub stop: f64,
    pub total: f64,
}

/// Records the full training objective for one example on `g`.
///
/// The diarization permutation is chosen on values, then the loss is built
/// on the graph under that fixed permutation; likewise for the speaker
/// loss. With the speaker head the objective is
/// `dia + beta * (spk + alpha * stop)`; without it, `dia + existence BCE`.
pub fn forward_loss(
    model: &EendModel,
    g: &mut Graph,
    b: &Bound,
    ex: &Example,
    cfg: &TrainConfig,
    epoch: usize,
    train: bool,
    seed: u64,
) -> Result<(Var, LossParts)> {
    let mc = model.config();
    let s_ref = ex.speakers.len();
    let e = model.encode_frames(g, b, &ex.features, train, seed)?;
    let states = model.eda_encode(g, b, e, seed ^ 0x5eed)?;
    let dec = model.eda_decode(g, b, &states, DecodeMode::Train { n_speakers: s_ref })?;
    let weights = cfg.weights.at_epoch(epoch);
    let t = ex.n_frames();

    let dia = if s_ref == 0 {
        g.constant(Tensor::scalar(0.0))
    } else {
        let probs = model.activity_probs(g, e, dec.attractors, s_ref)?;
        let y_hat = ActivityMatrix::from_data(t, s_ref, ex.frame_shift_s, g.value(probs).data().to_vec())?;
        let cost = bce_cost_matrix(&y_hat, &ex.labels, weights.gamma)?;
        let perm = solve_pit(&cost, cfg.dia_pit)?.permutation;
        let targets = ex.labels.select_columns(&perm);
        let targets = Tensor::matrix(t, s_ref, targets.data().to_vec());
        dia_bce_graph(g, probs, &targets, weights.gamma, cfg.reduction)?
    };

    let mut parts = LossParts {
        dia: g.value(dia).item(),
        ..LossParts::default()
    };
    let total = if mc.use_speaker_head {
        let lp = dec.spk_log_post.expect("speaker head emits posteriors");
        let classes = ex
            .classes
            .as_ref()
            .ok_or_else(|| Error::Input(format!("{}: speaker head needs class labels", ex.id)))?;
        let spk = if s_ref == 0 {
            g.constant(Tensor::scalar(0.0))
        } else {
            let rows = g.slice(lp, Axis::Rows, 0, s_ref)?;
            let post: Vec<Vec<f64>> = g
                .value(rows)
                .to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(f64::exp).collect())
                .collect();
            let cost = speaker_cost_matrix(&post, classes)?;
            let perm = solve_pit(&cost, cfg.spk_pit)?.permutation;
            let picked: Vec<usize> = perm.iter().map(|&l| classes[l]).collect();
            let nll = nll_graph(g, rows, &picked)?;
            match cfg.reduction {
                Reduction::Sum => nll,
                Reduction::Mean => g.scale(nll, 1.0 / s_ref as f64)?,
            }
        };
        let stop_row = g.slice(lp, Axis::Rows, s_ref, s_ref + 1)?;
        let stop = nll_graph(g, stop_row, &[0])?;
        parts.spk = g.value(spk).item();
        parts.stop = g.value(stop).item();
        let aux = g.scale(stop, weights.alpha)?;
        let aux = g.add(spk, aux)?;
        let aux = g.scale(aux, weights.beta())?;
        g.add(dia, aux)?
    } else {
        let ex_loss = existence_bce_graph(g, dec.existence)?;
        parts.stop = g.value(ex_loss).item();
        g.add(dia, ex_loss)?
    };
    parts.total = g.value(total).item();
    Ok((total, parts))
}

/// Loss and per-parameter gradients for one example.
pub fn example_gradients(
    model: &EendModel,
    ex: &Example,
    cfg: &TrainConfig,
    epoch: usize,
    seed: u64,
) -> Result<(LossParts, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, true);
    let (loss, parts) = forward_loss(model, &mut g, &b, ex, cfg, epoch, true, seed)?;
    let mut grads = g.backward(loss)?;
    let out = b
        .iter()
        .filter_map(|(name, &v)| grads.take(v).map(|t| (name.clone(), t)))
        .collect();
    Ok((parts, out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub dia_loss: f64,
    pub spk_loss: f64,
    pub stop_loss: f64,
    pub beta: f64,
    pub val_der: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best checkpoint by validation DER, with its selected post-processing.
    pub best: Checkpoint,
    pub best_val_der: Option<f64>,
    pub last: EendModel,
    pub log: Vec<EpochLog>,
}

fn step_seed(seed: u64, epoch: usize, idx: usize) -> u64 {
    seed ^ ((epoch as u64) << 32) ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn is_nonfinite(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Trains `model` in place of a copy and returns the best and last states.
/// Validation falls back to the training set when `val` is `None`. One JSON
/// line per epoch goes to `log_sink`.
pub fn train(
    model: EendModel,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if model.config().use_speaker_head && data.n_classes() > model.config().n_corpus_speakers {
        return Err(Error::Config(format!(
            "labels reach class {} but the speaker head has {} classes",
            data.n_classes(),
            model.config().n_corpus_speakers
        )));
    }
    let val = val.unwrap_or(data);
    let mut model = model;
    let mut adam = Adam::default();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, EendModel, InferenceSettings)> = None;
    let per_step = cfg.batch_size * cfg.accumulation;

    for epoch in 1..=cfg.epochs {
        let beta_epoch = epoch - 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut recording_rng(cfg.seed, epoch as u64));
        let mut sums = LossParts::default();
        for (bi, batch) in order.chunks(per_step).enumerate() {
            step += 1;
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &idx in batch {
                let ex = &data.examples[idx];
                let (parts, grads) = example_gradients(&model, ex, cfg, beta_epoch, step_seed(cfg.seed, epoch, idx))
                    .map_err(|e| match e {
                        e if is_nonfinite(&e) => Error::NonFinite(format!("epoch {epoch} batch {bi} ({}): {e}", ex.id)),
                        e => e,
                    })?;
                if !parts.total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss in epoch {epoch} batch {bi} ({})",
                        ex.id
                    )));
                }
                sums.dia += parts.dia;
                sums.spk += parts.spk;
                sums.stop += parts.stop;
                for (name, gt) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => a.data_mut().iter_mut().zip(gt.data()).for_each(|(x, y)| *x += y),
                        None => {
                            acc.insert(name, gt);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            acc.values_mut()
                .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= inv));
            let lr = cfg.lr_factor * noam_lr(model.config().dim, cfg.warmup_steps, step);
            adam.update(model.params_mut(), &acc, lr);
        }

        let n = data.len() as f64;
        let val_der = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let (settings, d) = select_postprocessing(&model, val, &cfg.thresholds, &cfg.median_windows)?;
            if best.as_ref().is_none_or(|(b, _, _)| d < *b) {
                best = Some((d, model.clone(), settings));
            }
            Some(d)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            dia_loss: sums.dia / n,
            spk_loss: sums.spk / n,
            stop_loss: sums.stop / n,
            beta: cfg.weights.at_epoch(beta_epoch).beta(),
            val_der,
        };
        log::info!(
            "epoch {epoch}: dia {:.4} spk {:.4} stop {:.4}{}",
            entry.dia_loss,
            entry.spk_loss,
            entry.stop_loss,
            val_der.map(|d| format!(" val DER {d:.2}")).unwrap_or_default()
        );
        if let Some(w) = log_sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            writeln!(w).map_err(|e| Error::io("<train log>", e))?;
        }
        log.push(entry);
    }

    let (best_der, best_model, settings) = match best {
        Some((d, m, s)) => (Some(d), m, s),
        None => (None, model.clone(), InferenceSettings::default()),
    };
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            inference: settings,
        },
        best_val_der: best_der,
        last: model,
        log,
    })
}

/// Estimated-speaker-count activity for every example.
pub fn infer_dataset(model: &EendModel, data: &Dataset) -> Result<Vec<ActivityMatrix>> {
    data.examples
        .iter()
        .map(|ex| {
            let feats = crate::frontend::FeatureSequence::new(ex.features.to_rows(), ex.frame_shift_s)?;
            Ok(model.infer(&feats, None)?.activity)
        })
        .collect()
}

/// Corpus DER (collar 0.25 s) of fixed activity matrices under one
/// post-processing setting. Recordings without scorable speech are skipped.
pub fn corpus_der(data: &Dataset, activity: &[ActivityMatrix], settings: &InferenceSettings) -> Result<f64> {
    let mut times = ErrorTimes::default();
    for (ex, y) in data.examples.iter().zip(activity) {
        let hyp = binarize(y, settings.activity_threshold, settings.median_frames)?;
        match der(&ex.reference, &hyp, DER_COLLAR) {
            Ok(s) => times.add(&s.times),
            Err(Error::Unscorable(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if times.scored_speech > 0.0 {
        Ok(times.pct(times.missed + times.false_alarm + times.confusion))
    } else {
        Err(Error::Unscorable(
            "no scorable reference speech in validation data".into(),
        ))
    }
}

/// Grid search over threshold and median window; the first setting with
/// the lowest DER wins.
pub fn select_postprocessing(
    model: &EendModel,
    data: &Dataset,
    thresholds: &[f64],
    median_windows: &[usize],
) -> Result<(InferenceSettings, f64)> {
    let activity = infer_dataset(model, data)?;
    let mut best: Option<(InferenceSettings, f64)> = None;
    for &th in thresholds {
        for &med in median_windows {
            let s = InferenceSettings {
                activity_threshold: th,
                median_frames: med,
            };
            let d = corpus_der(data, &activity, &s)?;
            if best.as_ref().is_none_or(|(_, b)| d < *b) {
                best = Some((s, d));
            }
        }
    }
    best.ok_or_else(|| Error::Config("post-processing grid is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, save_model, ModelConfig, Preset};
    use crate::simulator::{emit_dataset, Corpus, SimConfig};

    fn desk_data(n: usize, seed: u64, dir: &std::path::Path) -> Dataset {
        let corpus = Corpus::synthetic(4, 7);
        let cfg = SimConfig {
            seed,
            ..SimConfig::desk()
        };
        emit_dataset(&cfg, &corpus, n, dir).unwrap();
        Dataset::load(&dir.join("manifest.json")).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            thresholds: vec![0.5],
            median_windows: vec![1],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_smoke_writes_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data = desk_data(2, 1, dir.path());
        let model = EendModel::new(ModelConfig::desk(Preset::Plusplus, data.n_classes()), 0).unwrap();
        let mut log = Vec::new();
        let out = train(model, &data, None, &quick(1), Some(&mut log)).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(out.best_val_der.is_some());
        let line: serde_json::Value = serde_json::from_slice(&log).unwrap();
        assert_eq!(line["epoch"], 1);
        let path = dir.path().join("m.ckpt");
        save_model(&path, &out.best).unwrap();
        assert_eq!(load_model(&path).unwrap().model.params(), out.best.model.params());
    }

    #[test]
    fn overfits_one_recording() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = desk_data(1, 2, dir.path());
        data.examples.truncate(1);
        let mc = ModelConfig {
            dropout: 0.0,
            ..ModelConfig::desk(Preset::Baseline, data.n_classes())
        };
        let model = EendModel::new(mc, 0).unwrap();
        let cfg = TrainConfig {
            warmup_steps: 20,
            eval_every: 1000,
            ..quick(300)
        };
        let out = train(model, &data, None, &cfg, None).unwrap();
        let first = out.log[0].dia_loss;
        let last = out.log.last().unwrap().dia_loss;
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn gradients_reach_encoder_and_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let data = desk_data(1, 3, dir.path());
        for preset in Preset::ALL {
            let model = EendModel::new(ModelConfig::desk(preset, data.n_classes()), 0).unwrap();
            let (_, grads) = example_gradients(&model, &data.examples[0], &quick(1), 0, 1).unwrap();
            let norm = |prefix: &str| -> f64 {
                grads
                    .iter()
                    .filter(|(k, _)| k.starts_with(prefix))
                    .flat_map(|(_, t)| t.data().iter().map(|v| v * v))
                    .sum()
            };
            for prefix in ["in.", "enc0.", "enc1.", "eda.enc", "eda.dec"] {
                assert!(norm(prefix) > 0.0, "{preset:?}: no gradient at {prefix}");
            }
            // stop decisions come from the speaker head when it exists
            let (head, idle) = if preset.flags().1 {
                ("spk.", "exist.")
            } else {
                ("exist.", "spk.")
            };
            assert!(norm(head) > 0.0);
            assert_eq!(norm(idle), 0.0);
            if preset.flags().0 {
                assert!(norm("att.") > 0.0);
            }
        }
    }

    #[test]
    fn inference_is_deterministic_and_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let data = desk_data(1, 4, dir.path());
        let model = EendModel::new(ModelConfig::desk(Preset::Plusplus, data.n_classes()), 5).unwrap();
        let a = infer_dataset(&model, &data).unwrap();
        let b = infer_dataset(&model, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].frames(), data.examples[0].n_frames());
        assert!(a[0].speakers() <= model.config().max_decode_speakers);
    }

    #[test]
    fn export_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let data = desk_data(1, 5, dir.path());
        let model = EendModel::new(ModelConfig::desk(Preset::Plusplus, data.n_classes()), 5).unwrap();
        let ex = &data.examples[0];
        let feats = crate::frontend::FeatureSequence::new(ex.features.to_rows(), ex.frame_shift_s).unwrap();
        let inf = model.infer(&feats, Some(2)).unwrap();
        let files = export_inference(&dir.path().join("out"), &ex.id, &inf, &InferenceSettings::default()).unwrap();
        for p in [&files.activity, &files.attractors, &files.embeddings, &files.rttm] {
            assert!(p.exists(), "{}", p.display());
        }
        let back = ActivityMatrix::load_csv(&files.activity, 0.1).unwrap();
        assert_eq!(back.speakers(), 2);
        assert_eq!(back.frames(), ex.n_frames());
    }

    #[test]
    fn empty_training_set_rejected() {
        let model = EendModel::new(ModelConfig::desk(Preset::Baseline, 2), 0).unwrap();
        let data = Dataset { examples: vec![] };
        assert!(matches!(
            train(model, &data, None, &quick(1), None),
            Err(Error::Input(_))
        ));
    }
}
