//! Self-attentive frame encoder plus encoder-decoder attractor (EDA)
//! module, with optional attention-conditioned decoding and a speaker
//! classification head over attractors.

mod checkpoint;
mod config;

pub use checkpoint::{load_model, save_model, Checkpoint, InferenceSettings};
pub use config::{ModelConfig, Preset};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::tensor::{Axis, Graph, Tensor, Var};
use crate::types::ActivityMatrix;

const LN_EPS: f64 = 1e-5;

/// Named parameter tensors in a stable (sorted) order.
pub type ParamStore = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub struct EendModel {
    config: ModelConfig,
    params: ParamStore,
}

/// Parameter handles for one forward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Output of the EDA LSTM encoder.
pub struct EdaStates {
    /// Per-step hidden states `h^e_t`, `T x D`.
    pub hs: Var,
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Decode exactly `n + 1` attractors (n speakers plus one stop attractor).
    Train { n_speakers: usize },
    /// Decode until the stop criterion fires or the cap is hit.
    Infer,
    /// Decode exactly `n` attractors.
    Forced(usize),
}

/// Graph handles for decoded attractors.
pub struct Decoded {
    /// `N x D`.
    pub attractors: Var,
    /// `N x 1`.
    pub existence: Var,
    /// `N x (J+1)` log posteriors, when the speaker head is enabled.
    pub spk_log_post: Option<Var>,
    pub contexts: Vec<Var>,
    pub attention: Vec<Var>,
    /// Attractors that count as speakers (the rest are stop attractors).
    pub n_speakers: usize,
}

/// Attractors with their posteriors, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet {
    pub attractors: Vec<Vec<f64>>,
    pub existence_probs: Vec<f64>,
    pub speaker_posteriors: Option<Vec<Vec<f64>>>,
    pub context_vectors: Option<Vec<Vec<f64>>>,
    pub attention_weights: Option<Vec<Vec<f64>>>,
}

impl AttractorSet {
    pub fn len(&self) -> usize {
        self.attractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractors.is_empty()
    }
}

/// Everything the inference path produces.
#[derive(Debug, Clone)]
pub struct Inference {
    pub activity: ActivityMatrix,
    pub attractors: AttractorSet,
    pub embeddings: Vec<Vec<f64>>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::matrix(
        fan_in,
        fan_out,
        (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect(),
    )
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, a: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect())
}

/// Sinusoidal position table, `t x d`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(t, d, data)
}

fn lstm_params(p: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize) {
    let a = 1.0 / (d as f64).sqrt();
    p.insert(format!("{prefix}.wx"), uniform(rng, d, 4 * d, a));
    p.insert(format!("{prefix}.wh"), uniform(rng, d, 4 * d, a));
    // gate order i, f, g, o; forget bias starts at 1
    let mut b = vec![0.0; 4 * d];
    b[d..2 * d].iter_mut().for_each(|v| *v = 1.0);
    p.insert(format!("{prefix}.b"), Tensor::matrix(1, 4 * d, b));
}

impl EendModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let mut p = ParamStore::new();
        let ln = |p: &mut ParamStore, name: &str| {
            p.insert(format!("{name}.g"), Tensor::full(1, d, 1.0));
            p.insert(format!("{name}.b"), Tensor::zeros(1, d));
        };
        p.insert("in.w".into(), xavier(&mut rng, config.input_dim, d));
        p.insert("in.b".into(), Tensor::zeros(1, d));
        ln(&mut p, "in_ln");
        for l in 0..config.n_layers {
            ln(&mut p, &format!("enc{l}.ln1"));
            ln(&mut p, &format!("enc{l}.ln2"));
            for m in ["q", "k", "v", "o"] {
                p.insert(format!("enc{l}.attn.w{m}"), xavier(&mut rng, d, d));
                p.insert(format!("enc{l}.attn.b{m}"), Tensor::zeros(1, d));
            }
            p.insert(format!("enc{l}.ff1.w"), xavier(&mut rng, d, config.ff_dim));
            p.insert(format!("enc{l}.ff1.b"), Tensor::zeros(1, config.ff_dim));
            p.insert(format!("enc{l}.ff2.w"), xavier(&mut rng, config.ff_dim, d));
            p.insert(format!("enc{l}.ff2.b"), Tensor::zeros(1, d));
        }
        ln(&mut p, "out_ln");
        lstm_params(&mut p, &mut rng, "eda.enc", d);
        lstm_params(&mut p, &mut rng, "eda.dec", d);
        if config.use_attention_eda {
            for m in ["wh", "wa", "wc"] {
                p.insert(format!("att.{m}"), xavier(&mut rng, d, d));
            }
            p.insert("att.b".into(), Tensor::zeros(1, d));
            p.insert("att.v".into(), xavier(&mut rng, d, 1));
        }
        p.insert("exist.w".into(), xavier(&mut rng, d, 1));
        p.insert("exist.b".into(), Tensor::zeros(1, 1));
        if config.use_speaker_head {
            let classes = config.n_corpus_speakers + 1;
            p.insert("spk.w".into(), xavier(&mut rng, d, classes));
            p.insert("spk.b".into(), Tensor::zeros(1, classes));
        }
        Ok(EendModel { config, params: p })
    }

    /// Model from an explicit parameter map; names and shapes must match
    /// what [`EendModel::new`] creates for `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = EendModel::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Load(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, t) in &reference.params {
            match params.get(name) {
                None => return Err(Error::Load(format!("missing tensor {name}"))),
                Some(got) if got.shape() != t.shape() => {
                    return Err(Error::Load(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        got.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(EendModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Adjusts inference-only settings (thresholds, decode cap).
    pub fn config_mut_inference(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Records every parameter on `g`. With `trainable`, they become
    /// gradient-tracked leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    fn linear(&self, g: &mut Graph, b: &Bound, x: Var, name: &str) -> Result<Var> {
        let w = b.get(&format!("{name}.w"));
        let bias = b.get(&format!("{name}.b"));
        let y = g.matmul(x, w)?;
        g.add_row(y, bias)
    }

    fn layer_norm(&self, g: &mut Graph, b: &Bound, x: Var, name: &str) -> Result<Var> {
        g.layer_norm(x, b.get(&format!("{name}.g")), b.get(&format!("{name}.b")), LN_EPS)
    }

    fn self_attention(&self, g: &mut Graph, b: &Bound, x: Var, layer: usize) -> Result<Var> {
        let d = self.config.dim;
        let heads = self.config.n_heads;
        let dk = d / heads;
        let proj = |g: &mut Graph, m: &str| -> Result<Var> {
            let w = b.get(&format!("enc{layer}.attn.w{m}"));
            let bias = b.get(&format!("enc{layer}.attn.b{m}"));
            let y = g.matmul(x, w)?;
            g.add_row(y, bias)
        };
        let q = proj(g, "q")?;
        let k = proj(g, "k")?;
        let v = proj(g, "v")?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice(q, Axis::Cols, h * dk, (h + 1) * dk)?;
            let kh = g.slice(k, Axis::Cols, h * dk, (h + 1) * dk)?;
            let vh = g.slice(v, Axis::Cols, h * dk, (h + 1) * dk)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, 1.0 / (dk as f64).sqrt())?;
            let a = g.softmax(s, Axis::Cols)?;
            outs.push(g.matmul(a, vh)?);
        }
        let cat = g.concat(&outs, Axis::Cols)?;
        let wo = b.get(&format!("enc{layer}.attn.wo"));
        let bo = b.get(&format!("enc{layer}.attn.bo"));
        let y = g.matmul(cat, wo)?;
        g.add_row(y, bo)
    }

    /// Frame encoder: input projection, layer norm, optional positional
    /// encoding, pre-norm Transformer blocks and a final layer norm.
    pub fn encode_frames(&self, g: &mut Graph, b: &Bound, features: &Tensor, train: bool, seed: u64) -> Result<Var> {
        let (t, f) = features.dims2()?;
        if f != self.config.input_dim {
            return Err(Error::Config(format!(
                "feature width {f} does not match model input {}",
                self.config.input_dim
            )));
        }
        let rate = self.config.dropout;
        let x = g.constant(features.clone());
        let mut e = self.linear(g, b, x, "in")?;
        e = self.layer_norm(g, b, e, "in_ln")?;
        if self.config.use_positional_encoding {
            let pe = g.constant(positional_encoding(t, self.config.dim));
            e = g.add(e, pe)?;
        }
        for l in 0..self.config.n_layers {
            let h = self.layer_norm(g, b, e, &format!("enc{l}.ln1"))?;
            let s = self.self_attention(g, b, h, l)?;
            let s = g.dropout(s, rate, train, seed)?;
            e = g.add(e, s)?;
            let h = self.layer_norm(g, b, e, &format!("enc{l}.ln2"))?;
            let h = self.linear(g, b, h, &format!("enc{l}.ff1"))?;
            let h = g.relu(h)?;
            let h = g.dropout(h, rate, train, seed)?;
            let h = self.linear(g, b, h, &format!("enc{l}.ff2"))?;
            let h = g.dropout(h, rate, train, seed)?;
            e = g.add(e, h)?;
        }
        self.layer_norm(g, b, e, "out_ln")
    }

    fn lstm_step(&self, g: &mut Graph, b: &Bound, prefix: &str, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.config.dim;
        let hw = g.matmul(h, b.get(&format!("{prefix}.wh")))?;
        let gates = g.add(xw, hw)?;
        let gi = g.slice(gates, Axis::Cols, 0, d)?;
        let gf = g.slice(gates, Axis::Cols, d, 2 * d)?;
        let gg = g.slice(gates, Axis::Cols, 2 * d, 3 * d)?;
        let go = g.slice(gates, Axis::Cols, 3 * d, 4 * d)?;
        let i = g.sigmoid(gi)?;
        let f = g.sigmoid(gf)?;
        let cand = g.tanh(gg)?;
        let o = g.sigmoid(go)?;
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, cand)?;
        let c2 = g.add(fc, ig)?;
        let tc = g.tanh(c2)?;
        let h2 = g.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Runs the EDA LSTM encoder over the frame embeddings. Without
    /// attention decoding the frames are shuffled first (seeded).
    pub fn eda_encode(&self, g: &mut Graph, b: &Bound, e: Var, shuffle_seed: u64) -> Result<EdaStates> {
        let (t, d) = g.value(e).dims2()?;
        let input = if self.config.use_attention_eda {
            e
        } else {
            let mut order: Vec<usize> = (0..t).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            g.gather_rows(e, &order)?
        };
        let xw = g.matmul(input, b.get("eda.enc.wx"))?;
        let xw = g.add_row(xw, b.get("eda.enc.b"))?;
        let mut h = g.constant(Tensor::zeros(1, d));
        let mut c = g.constant(Tensor::zeros(1, d));
        let mut hs = Vec::with_capacity(t);
        for step in 0..t {
            let x = g.slice(xw, Axis::Rows, step, step + 1)?;
            (h, c) = self.lstm_step(g, b, "eda.enc", x, h, c)?;
            hs.push(h);
        }
        let hs = g.concat(&hs, Axis::Rows)?;
        Ok(EdaStates { hs, h, c })
    }

    /// Additive attention over encoder states:
    /// `w = softmax_t(v . tanh(W_h h_t + W_a a + W_c c + b))`, `z = sum_t w_t h_t`.
    /// `hs_proj` is `hs W_h`, precomputed once per sequence.
    pub fn attention_context(
        &self,
        g: &mut Graph,
        b: &Bound,
        a_prev: Var,
        c_prev: Var,
        hs: Var,
        hs_proj: Var,
    ) -> Result<(Var, Var)> {
        let qa = g.matmul(a_prev, b.get("att.wa"))?;
        let qc = g.matmul(c_prev, b.get("att.wc"))?;
        let q = g.add(qa, qc)?;
        let q = g.add(q, b.get("att.b"))?;
        let u = g.add_row(hs_proj, q)?;
        let u = g.tanh(u)?;
        let scores = g.matmul(u, b.get("att.v"))?;
        let scores = g.transpose(scores)?;
        let w = g.softmax(scores, Axis::Cols)?;
        let z = g.matmul(w, hs)?;
        Ok((z, w))
    }

    fn stop_fired(&self, g: &Graph, existence: Var, log_post: Option<Var>) -> bool {
        if self.config.use_speaker_head {
            let lp = log_post.expect("speaker head enabled");
            g.value(lp).data()[0].exp() > self.config.stop_class_threshold
        } else {
            g.value(existence).item() < self.config.existence_threshold
        }
    }

    /// Iterative attractor decoding. Step inputs are zero vectors, or the
    /// attention context when attention decoding is enabled.
    pub fn eda_decode(&self, g: &mut Graph, b: &Bound, states: &EdaStates, mode: DecodeMode) -> Result<Decoded> {
        let d = self.config.dim;
        let steps = match mode {
            DecodeMode::Train { n_speakers } => n_speakers + 1,
            DecodeMode::Forced(n) => n,
            DecodeMode::Infer => self.config.max_decode_speakers + 1,
        };
        let hs_proj = if self.config.use_attention_eda {
            Some(g.matmul(states.hs, b.get("att.wh"))?)
        } else {
            None
        };
        let dec_bias = b.get("eda.dec.b");
        let zero_in = if self.config.use_attention_eda {
            None
        } else {
            Some(dec_bias)
        };
        let (mut h, mut c) = (states.h, states.c);
        let mut attractors = Vec::new();
        let mut existence = Vec::new();
        let mut log_posts = Vec::new();
        let mut contexts = Vec::new();
        let mut attention = Vec::new();
        let mut n_speakers = None;
        for s in 0..steps {
            let xw = match zero_in {
                // zero input: x W_x vanishes, leaving the bias
                Some(bias) => bias,
                None => {
                    let (z, w) = self.attention_context(g, b, h, c, states.hs, hs_proj.unwrap())?;
                    contexts.push(z);
                    attention.push(w);
                    let zw = g.matmul(z, b.get("eda.dec.wx"))?;
                    g.add(zw, dec_bias)?
                }
            };
            (h, c) = self.lstm_step(g, b, "eda.dec", xw, h, c)?;
            let ex = self.linear(g, b, h, "exist")?;
            let ex = g.sigmoid(ex)?;
            let lp = if self.config.use_speaker_head {
                let logits = self.linear(g, b, h, "spk")?;
                Some(g.log_softmax(logits, Axis::Cols)?)
            } else {
                None
            };
            attractors.push(h);
            existence.push(ex);
            if let Some(lp) = lp {
                log_posts.push(lp);
            }
            if mode == DecodeMode::Infer && self.stop_fired(g, ex, lp) {
                n_speakers = Some(s);
                break;
            }
        }
        let n_speakers = match mode {
            DecodeMode::Train { n_speakers } => n_speakers,
            DecodeMode::Forced(n) => n,
            DecodeMode::Infer => n_speakers.unwrap_or(self.config.max_decode_speakers),
        };
        let (attractors, existence) = if attractors.is_empty() {
            (g.constant(Tensor::zeros(1, d)), g.constant(Tensor::zeros(1, 1)))
        } else {
            (g.concat(&attractors, Axis::Rows)?, g.concat(&existence, Axis::Rows)?)
        };
        let spk_log_post = if log_posts.is_empty() {
            None
        } else {
            Some(g.concat(&log_posts, Axis::Rows)?)
        };
        Ok(Decoded {
            attractors,
            existence,
            spk_log_post,
            contexts,
            attention,
            n_speakers,
        })
    }

    /// `sigmoid(E A^T)` for the first `n` attractors.
    pub fn activity_probs(&self, g: &mut Graph, e: Var, attractors: Var, n: usize) -> Result<Var> {
        let a = g.slice(attractors, Axis::Rows, 0, n)?;
        let at = g.transpose(a)?;
        let logits = g.matmul(e, at)?;
        g.sigmoid(logits)
    }

    /// Softmax over `J + 1` classes for each attractor row.
    pub fn speaker_posteriors(&self, g: &mut Graph, b: &Bound, attractors: Var) -> Result<Var> {
        if !self.config.use_speaker_head {
            return Err(Error::Config("speaker head disabled".into()));
        }
        let logits = self.linear(g, b, attractors, "spk")?;
        g.softmax(logits, Axis::Cols)
    }

    /// Deterministic inference on one feature sequence. `oracle_speakers`
    /// forces the number of decoded attractors.
    pub fn infer(&self, features: &FeatureSequence, oracle_speakers: Option<usize>) -> Result<Inference> {
        if features.is_empty() {
            return Err(Error::Input("no feature frames".into()));
        }
        let x = Tensor::matrix(features.len(), features.width(), features.flat());
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let e = self.encode_frames(&mut g, &b, &x, false, 0)?;
        let states = self.eda_encode(&mut g, &b, e, 0)?;
        let mode = match oracle_speakers {
            Some(n) => DecodeMode::Forced(n),
            None => DecodeMode::Infer,
        };
        let dec = self.eda_decode(&mut g, &b, &states, mode)?;
        let t = features.len();
        let shift = features.frame_shift_s();
        let activity = if dec.n_speakers == 0 {
            ActivityMatrix::zeros(t, 0, shift)
        } else {
            let p = self.activity_probs(&mut g, e, dec.attractors, dec.n_speakers)?;
            ActivityMatrix::from_data(t, dec.n_speakers, shift, g.value(p).data().to_vec())?
        };
        let rows = |v: Var, n: usize| g.value(v).to_rows().into_iter().take(n).collect::<Vec<_>>();
        let n = dec.n_speakers;
        let attractors = AttractorSet {
            attractors: rows(dec.attractors, n),
            existence_probs: g.value(dec.existence).data().iter().take(n).copied().collect(),
            speaker_posteriors: dec.spk_log_post.map(|lp| {
                rows(lp, n)
                    .into_iter()
                    .map(|r| r.into_iter().map(f64::exp).collect())
                    .collect()
            }),
            context_vectors: (!dec.contexts.is_empty()).then(|| {
                dec.contexts
                    .iter()
                    .take(n)
                    .map(|&z| g.value(z).data().to_vec())
                    .collect()
            }),
            attention_weights: (!dec.attention.is_empty()).then(|| {
                dec.attention
                    .iter()
                    .take(n)
                    .map(|&w| g.value(w).data().to_vec())
                    .collect()
            }),
        };
        Ok(Inference {
            activity,
            attractors,
            embeddings: g.value(e).to_rows(),
        })
    }
}
