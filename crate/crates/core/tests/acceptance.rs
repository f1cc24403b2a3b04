//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use avdiar::assign::{exhaustive_min, permutations};
use avdiar::eval::{binarize, der, save_rttm, score, DerScore, ErrorTimes, Rttm};
use avdiar::fusion::{fuse_scores, match_streams};
use avdiar::losses::{bce_cost_matrix, solve_pit, PitMode};
use avdiar::loudness::measure_lufs;
use avdiar::model::{save_model, Preset};
use avdiar::simulator::{emit_dataset, recording_rng, render, sample_plan, Joint, SourceClass};
use avdiar::tensor::Axis;
use avdiar::trainer::{export_inference, forward_loss, load_features, train, DER_COLLAR};
use avdiar::visual::{
    cluster_tracks, clusters_to_streams, save_tracks, synthesize_tracks, FaceFrame, FaceTrack, TrackSynthConfig,
};
use avdiar::{
    ActivityMatrix, Corpus, Dataset, EendModel, Graph, Manifest, ModelConfig, Segment, SegmentList, SimConfig, Tensor,
    TrainConfig, Var,
};
use common::{central_diff, GradStats};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- 1

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Graph, &[Var]) -> avdiar::Result<Var> + Sync;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
}

/// Moves entries at least `gap` away from each kink.
fn avoid_kinks(t: Tensor, kinks: &[f64], gap: f64) -> Tensor {
    let (r, c) = t.dims2().unwrap();
    let data = t
        .data()
        .iter()
        .map(|&v| {
            kinks.iter().fold(v, |v, &k| {
                if (v - k).abs() < gap {
                    k + gap.copysign(v - k)
                } else {
                    v
                }
            })
        })
        .collect();
    Tensor::matrix(r, c, data)
}

/// `sum(op(inputs) * w)` and, optionally, its input gradients.
fn weighted_loss(inputs: &[Tensor], build: &Build, w: &Tensor, grads: bool) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv).unwrap();
    let l = g.sum(p).unwrap();
    let value = g.value(l).item();
    if !grads {
        return (value, Vec::new());
    }
    let gr = g.backward(l).unwrap();
    (value, vars.iter().map(|&v| gr.get(v).unwrap().clone()).collect())
}

fn check_op(inputs: Vec<Tensor>, build: &Build, rng: &mut ChaCha8Rng) -> GradStats {
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let y = build(&mut g, &vars).unwrap();
        g.value(y).dims2().unwrap()
    };
    let w = random_tensor(rng, shape.0, shape.1);
    let (_, analytic) = weighted_loss(&inputs, build, &w, true);
    let mut stats = GradStats::default();
    for k in 0..inputs.len() {
        let (r, c) = inputs[k].dims2().unwrap();
        for i in 0..r * c {
            let mut f = |x: &[f64]| {
                let mut ins = inputs.clone();
                ins[k] = Tensor::matrix(r, c, x.to_vec());
                weighted_loss(&ins, build, &w, false).0
            };
            let numeric = central_diff(&mut f, inputs[k].data(), i, H);
            stats.record(analytic[k].data()[i], numeric);
        }
    }
    stats
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Box<Build>)> {
    let mut m = |r, c| random_tensor(rng, r, c);
    let positive = |t: Tensor| {
        let (r, c) = t.dims2().unwrap();
        Tensor::matrix(r, c, t.data().iter().map(|v| v.abs() + 0.2).collect())
    };
    vec![
        (
            "matmul",
            vec![m(3, 4), m(4, 2)],
            Box::new(|g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1])),
        ),
        (
            "add",
            vec![m(3, 4), m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![m(3, 4), m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![m(3, 4), m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1])),
        ),
        (
            "add_row",
            vec![m(3, 4), m(1, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.add_row(v[0], v[1])),
        ),
        (
            "scale",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.scale(v[0], -0.7)),
        ),
        (
            "add_scalar",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.add_scalar(v[0], 0.3)),
        ),
        (
            "sigmoid",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.sigmoid(v[0])),
        ),
        ("tanh", vec![m(3, 4)], Box::new(|g: &mut Graph, v: &[Var]| g.tanh(v[0]))),
        ("exp", vec![m(3, 4)], Box::new(|g: &mut Graph, v: &[Var]| g.exp(v[0]))),
        (
            "log",
            vec![positive(m(3, 4))],
            Box::new(|g: &mut Graph, v: &[Var]| g.log(v[0])),
        ),
        (
            "relu",
            vec![avoid_kinks(m(3, 4), &[0.0], 1e-3)],
            Box::new(|g: &mut Graph, v: &[Var]| g.relu(v[0])),
        ),
        (
            "clamp",
            vec![avoid_kinks(m(3, 4), &[-1.0, 1.0], 1e-3)],
            Box::new(|g: &mut Graph, v: &[Var]| g.clamp(v[0], -1.0, 1.0)),
        ),
        (
            "softmax_cols",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.softmax(v[0], Axis::Cols)),
        ),
        (
            "softmax_rows",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.softmax(v[0], Axis::Rows)),
        ),
        (
            "log_softmax_cols",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.log_softmax(v[0], Axis::Cols)),
        ),
        (
            "log_softmax_rows",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.log_softmax(v[0], Axis::Rows)),
        ),
        (
            "layer_norm",
            vec![m(3, 4), m(1, 4), m(1, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "concat_cols",
            vec![m(3, 2), m(3, 3)],
            Box::new(|g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1]], Axis::Cols)),
        ),
        (
            "concat_rows",
            vec![m(2, 4), m(1, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1]], Axis::Rows)),
        ),
        (
            "slice_cols",
            vec![m(3, 5)],
            Box::new(|g: &mut Graph, v: &[Var]| g.slice(v[0], Axis::Cols, 1, 4)),
        ),
        (
            "slice_rows",
            vec![m(4, 3)],
            Box::new(|g: &mut Graph, v: &[Var]| g.slice(v[0], Axis::Rows, 2, 4)),
        ),
        (
            "transpose",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.transpose(v[0])),
        ),
        (
            "gather_rows",
            vec![m(5, 3)],
            Box::new(|g: &mut Graph, v: &[Var]| g.gather_rows(v[0], &[0, 2, 2, 4])),
        ),
        (
            "dropout",
            vec![m(3, 4)],
            Box::new(|g: &mut Graph, v: &[Var]| g.dropout(v[0], 0.3, true, 7)),
        ),
        ("sum", vec![m(3, 4)], Box::new(|g: &mut Graph, v: &[Var]| g.sum(v[0]))),
        ("mean", vec![m(3, 4)], Box::new(|g: &mut Graph, v: &[Var]| g.mean(v[0]))),
    ]
}

/// Gradient of the full training objective w.r.t. sampled parameters.
fn check_model(preset: Preset, ex: &avdiar::trainer::Example, n_classes: usize, rng: &mut ChaCha8Rng) -> GradStats {
    let cfg = TrainConfig::default();
    let model = EendModel::new(ModelConfig::desk(preset, n_classes), 1).unwrap();
    let loss_of = |m: &EendModel| {
        let mut g = Graph::new();
        let b = m.bind(&mut g, true);
        let (l, _) = forward_loss(m, &mut g, &b, ex, &cfg, 0, true, 42).unwrap();
        (g, b, l)
    };
    let (g, b, l) = loss_of(&model);
    let grads = g.backward(l).unwrap();
    let mut stats = GradStats::default();
    for (name, t) in model.params() {
        let analytic = grads.get(b.get(name)).unwrap();
        let picks: Vec<usize> = (0..4).map(|_| rng.random_range(0..t.numel())).collect();
        for i in picks {
            let mut f = |x: &[f64]| {
                let mut params = model.params().clone();
                params.insert(name.clone(), Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap());
                let m = EendModel::from_params(model.config().clone(), params).unwrap();
                let (g, _, l) = loss_of(&m);
                g.value(l).item()
            };
            stats.record(analytic.data()[i], central_diff(&mut f, t.data(), i, H));
        }
    }
    stats
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (String::new(), 0.0);
    let mut all = GradStats::default();
    for (name, inputs, build) in op_cases(&mut rng) {
        let s = check_op(inputs, build.as_ref(), &mut rng);
        if s.max_rel > worst.1 {
            worst = (name.to_string(), s.max_rel);
        }
        all.merge(s);
    }

    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig {
        recording_len_s: 3.0,
        seed: 9,
        ..SimConfig::desk()
    };
    emit_dataset(&sim, &Corpus::synthetic(4, 5), 1, dir.path()).unwrap();
    let data = Dataset::load(&dir.path().join("manifest.json")).unwrap();
    for preset in Preset::ALL {
        let s = check_model(preset, &data.examples[0], data.n_classes(), &mut rng);
        if s.max_rel > worst.1 {
            worst = (format!("model/{preset:?}"), s.max_rel);
        }
        all.merge(s);
    }
    let took = t0.elapsed();
    Verdict::new(
        all.max_rel < GRAD_TOL && took < Duration::from_secs(120),
        format!(
            "max rel err {:.2e} ({}) over {} checks, limit {GRAD_TOL:e}; {}",
            all.max_rel,
            worst.0,
            all.checks,
            secs(took)
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut details = Vec::new();
    let mut pass = true;
    for s in 2..=6 {
        let (mut exact, mut within) = (0, 0);
        for _ in 0..100 {
            let t = 50;
            let y_hat: Vec<f64> = (0..t * s).map(|_| rng.random_range(0.01..0.99)).collect();
            let y: Vec<f64> = (0..t * s).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
            let y_hat = ActivityMatrix::from_data(t, s, 0.1, y_hat).unwrap();
            let y = ActivityMatrix::from_data(t, s, 0.1, y).unwrap();
            let cost = bce_cost_matrix(&y_hat, &y, 5.0).unwrap();
            let (_, best) = exhaustive_min(&cost);
            let got = solve_pit(&cost, PitMode::sinkhorn_default()).unwrap().loss;
            if (got - best).abs() <= 1e-9 * best.abs().max(1.0) {
                exact += 1;
            }
            if got <= best * 1.01 {
                within += 1;
            }
        }
        pass &= exact >= 95 && within == 100;
        details.push(format!("S={s}: {exact}% optimal, {within}% within 1%"));
    }
    let took = t0.elapsed();
    Verdict::new(
        pass && took < Duration::from_secs(60),
        format!("{}; {}", details.join(", "), secs(took)),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig {
        seed: 3,
        ..SimConfig::desk()
    };
    emit_dataset(&sim, &Corpus::synthetic(10, 1), 20, dir.path()).unwrap();
    let data = Dataset::load(&dir.path().join("manifest.json")).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let run = |preset: Preset| {
        let model = EendModel::new(ModelConfig::desk(preset, data.n_classes()), 0).unwrap();
        train(model, &data, None, &cfg, None).unwrap()
    };
    let (pp, base) = std::thread::scope(|s| {
        let a = s.spawn(|| run(Preset::Plusplus));
        let b = s.spawn(|| run(Preset::Baseline));
        (a.join().unwrap(), b.join().unwrap())
    });
    let took = t0.elapsed();
    let pp_der = pp.best_val_der.unwrap_or(f64::INFINITY);
    let base_der = base.best_val_der.unwrap_or(f64::INFINITY);
    let switch = base.log.iter().all(|l| l.spk_loss == 0.0) && pp.log.iter().all(|l| l.spk_loss > 0.0);
    Verdict::new(
        pp_der < 10.0 && base_der < 10.0 && switch && took < Duration::from_secs(15 * 60),
        format!(
            "plusplus DER {pp_der:.2}%, baseline DER {base_der:.2}% (limit 10%), speaker loss only with head: {switch}; {}",
            secs(took)
        ),
    )
}

// ---------------------------------------------------------------- 4

fn random_reference(rng: &mut ChaCha8Rng, speakers: usize, len: f64) -> SegmentList {
    let mut segs = Vec::new();
    for s in 0..speakers {
        for _ in 0..rng.random_range(2..7) {
            let on = rng.random_range(0.0..len - 1.0);
            let off = (on + rng.random_range(0.3..6.0)).min(len);
            segs.push(Segment::new(format!("ref{s}"), on, off));
        }
    }
    SegmentList::new(segs).unwrap()
}

fn perturbed_hypothesis(rng: &mut ChaCha8Rng, r: &SegmentList, len: f64) -> SegmentList {
    let jitter = Normal::new(0.0, 0.3).unwrap();
    let n_hyp = r.speakers().len() + rng.random_range(0..2);
    let mut label: BTreeMap<String, usize> = BTreeMap::new();
    let mut order: Vec<usize> = (0..n_hyp).collect();
    order.shuffle(rng);
    for (k, s) in r.speakers().into_iter().enumerate() {
        label.insert(s, order[k]);
    }
    let mut segs = Vec::new();
    for s in r.iter() {
        if rng.random::<f64>() < 0.15 {
            continue;
        }
        let on = (s.onset + jitter.sample(rng)).max(0.0);
        let off = (s.offset + jitter.sample(rng)).min(len);
        if off <= on + 0.05 {
            continue;
        }
        let k = if rng.random::<f64>() < 0.85 {
            label[&s.speaker]
        } else {
            rng.random_range(0..n_hyp)
        };
        segs.push(Segment::new(format!("hyp{k}"), on, off));
    }
    for _ in 0..rng.random_range(0..4) {
        let on = rng.random_range(0.0..len - 1.0);
        segs.push(Segment::new(
            format!("hyp{}", rng.random_range(0..n_hyp)),
            on,
            on + rng.random_range(0.2..2.0),
        ));
    }
    SegmentList::new(segs).unwrap()
}

/// 10 ms frame counting with its own exhaustive speaker mapping.
fn frame_oracle_der(r: &SegmentList, h: &SegmentList, collar: f64) -> f64 {
    let step = 0.01;
    let end = r.end_time().max(h.end_time());
    let n = (end / step).ceil() as usize;
    let rs = r.merged_by_speaker();
    let hs = h.merged_by_speaker();
    let inside = |iv: &[(f64, f64)], c: f64| iv.iter().any(|&(a, b)| a <= c && c < b);
    let boundaries: Vec<f64> = rs
        .iter()
        .flat_map(|(_, iv)| iv.iter().flat_map(|&(a, b)| [a, b]))
        .collect();
    let frames: Vec<(Vec<bool>, Vec<bool>)> = (0..n)
        .map(|k| (k as f64 + 0.5) * step)
        .filter(|&c| boundaries.iter().all(|&b| (c - b).abs() >= collar))
        .map(|c| {
            (
                rs.iter().map(|(_, iv)| inside(iv, c)).collect(),
                hs.iter().map(|(_, iv)| inside(iv, c)).collect(),
            )
        })
        .collect();
    let nr = rs.len();
    let nh = hs.len();
    // every injective partial map, as ref -> Option<hyp>
    let mut best_correct = 0usize;
    let slots: Vec<Option<usize>> = (0..nh).map(Some).chain(std::iter::repeat_n(None, nr)).collect();
    for p in permutations(slots.len()) {
        let map: Vec<Option<usize>> = p[..nr].iter().map(|&i| slots[i]).collect();
        let correct = frames
            .iter()
            .map(|(rf, hf)| (0..nr).filter(|&i| rf[i] && map[i].is_some_and(|j| hf[j])).count())
            .sum();
        best_correct = best_correct.max(correct);
    }
    let (mut scored, mut err) = (0usize, 0usize);
    for (rf, hf) in &frames {
        let a = rf.iter().filter(|&&x| x).count();
        let b = hf.iter().filter(|&&x| x).count();
        scored += a;
        err += a.max(b);
    }
    100.0 * (err - best_correct) as f64 / scored as f64
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut self_zero = true;
    for _ in 0..50 {
        let len = 60.0;
        let n_spk = rng.random_range(2..4);
        let r = random_reference(&mut rng, n_spk, len);
        let h = perturbed_hypothesis(&mut rng, &r, len);
        let interval = der(&r, &h, DER_COLLAR).unwrap().der;
        let oracle = frame_oracle_der(&r, &h, DER_COLLAR);
        worst = worst.max((interval - oracle).abs());
        self_zero &= der(&r, &r, DER_COLLAR).unwrap().der == 0.0;
    }
    let t = ErrorTimes {
        scored_speech: 100.0,
        missed: 17.4,
        false_alarm: 9.1,
        confusion: 18.9,
    };
    let s: DerScore = DerScore::from_times(t, Vec::new()).unwrap();
    let identity = (s.der - 45.4).abs() < 1e-9;
    Verdict::new(
        worst <= 0.5 && self_zero && identity,
        format!(
            "max |interval - frame oracle| {worst:.3} points (limit 0.5); der(ref,ref)=0: {self_zero}; 17.4+9.1+18.9 -> {:.1}",
            s.der
        ),
    )
}

// ---------------------------------------------------------------- 5

fn analytic_speaker_mean(cfg: &SimConfig) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};
    let n = SNormal::new(cfg.n_speakers_mean, cfg.n_speakers_std).unwrap();
    let (lo, hi) = (cfg.n_speakers_min, cfg.n_speakers_max);
    (lo..=hi)
        .map(|k| {
            let below = if k == lo { 0.0 } else { n.cdf(k as f64 - 0.5) };
            let above = if k == hi { 1.0 } else { n.cdf(k as f64 + 0.5) };
            k as f64 * (above - below)
        })
        .sum()
}

fn criterion_5() -> Verdict {
    let cfg = SimConfig::default();
    let corpus = Corpus::synthetic(cfg.n_speakers_max, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let analytic = analytic_speaker_mean(&cfg);
    let (mut spk_sum, mut overlaps, mut joints) = (0usize, 0usize, 0usize);
    for _ in 0..10_000 {
        let plan = sample_plan(&cfg, &corpus, &mut rng).unwrap();
        joints += plan.utterances.iter().filter(|u| u.joint.is_some()).count();
        overlaps += plan
            .utterances
            .iter()
            .filter(|u| u.joint == Some(Joint::Overlap))
            .count();
        spk_sum += plan.speakers.len();
    }
    let mean = spk_sum as f64 / 10_000.0;
    let overlap_frac = overlaps as f64 / joints as f64;

    let mut coverage = Vec::new();
    let mut worst_lufs: f64 = 0.0;
    for i in 0..3u64 {
        let mut rng = recording_rng(cfg.seed, i);
        let plan = sample_plan(&cfg, &corpus, &mut rng).unwrap();
        let out = render(&plan, &corpus, &cfg).unwrap();
        let noise_ms: u64 = out
            .clips
            .iter()
            .filter(|c| matches!(c.class, SourceClass::Noise))
            .map(|c| c.duration_ms)
            .sum();
        coverage.push(noise_ms as f64 / plan.recording_len_ms as f64);
        for c in out.clips.iter().filter(|c| c.duration_ms >= 1000) {
            if let Some(m) = c.measured_lufs {
                worst_lufs = worst_lufs.max((m - c.target_lufs).abs());
            }
        }
    }
    let sine: Vec<f64> = (0..5 * 16_000)
        .map(|i| (2.0 * std::f64::consts::PI * 997.0 * i as f64 / 16_000.0).sin())
        .collect();
    let sine_lufs = measure_lufs(&sine, 16_000).unwrap().unwrap();

    let pass = (mean - analytic).abs() <= 0.15
        && (overlap_frac - 0.20).abs() <= 0.02
        && coverage.iter().all(|c| (c - 0.5).abs() <= 0.10)
        && worst_lufs <= 0.5
        && (sine_lufs + 3.01).abs() <= 0.1;
    Verdict::new(
        pass,
        format!(
            "speakers {mean:.3} vs {analytic:.3}; overlap joints {overlap_frac:.4}; noise coverage {:?}; worst clip LUFS error {worst_lufs:.3}; sine {sine_lufs:.3} LUFS",
            coverage.iter().map(|c| format!("{:.1}%", 100.0 * c)).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn hyp_der(reference: &SegmentList, y: &ActivityMatrix) -> f64 {
    der(reference, &binarize(y, 0.5, 1).unwrap(), DER_COLLAR).unwrap().der
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (frames, shift) = (200, 0.1);

    let mut identity = true;
    for _ in 0..20 {
        let s = rng.random_range(1..5);
        let a = ActivityMatrix::from_data(frames, s, shift, (0..frames * s).map(|_| rng.random()).collect()).unwrap();
        let v = ActivityMatrix::zeros(frames, 0, shift);
        let m = match_streams(&a, &v).unwrap();
        identity &= fuse_scores(&a, &v, &m, true).unwrap() == a && fuse_scores(&a, &v, &m, false).unwrap() == a;
    }

    // on-screen A and B; off-screen C never overlaps them
    let mut improved = true;
    let mut margins = Vec::new();
    for _ in 0..20 {
        let mut segs = Vec::new();
        let mut t = 0.0;
        while t < 19.0 {
            let d = rng.random_range(0.5..2.5f64).min(20.0 - t);
            let spk = ["A", "B", "C"][rng.random_range(0..3)];
            segs.push(Segment::new(spk, t, t + d));
            t += d + rng.random_range(0.0..0.5);
        }
        let reference = SegmentList::new(segs).unwrap();
        let names = reference.speakers();
        let truth = ActivityMatrix::from_segments(&reference, &names, frames, shift);
        let on_screen: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| *n != "C")
            .map(|(i, _)| i)
            .collect();

        let mut audio = ActivityMatrix::zeros(frames, names.len(), shift);
        for f in 0..frames {
            for s in 0..names.len() {
                audio.set(f, s, if truth.get(f, s) == 1.0 { 0.9 } else { 0.05 });
            }
        }
        // false alarms on other streams while an on-screen speaker talks
        for f in 0..frames {
            if on_screen.iter().any(|&s| truth.get(f, s) == 1.0) && rng.random::<f64>() < 0.3 {
                let s = rng.random_range(0..names.len());
                if truth.get(f, s) == 0.0 {
                    audio.set(f, s, 0.8);
                }
            }
        }
        let mut cols: Vec<Vec<f64>> = on_screen.iter().map(|&s| truth.column(s)).collect();
        cols.shuffle(&mut rng);
        let visual = ActivityMatrix::from_columns(&cols, frames, shift).unwrap();
        let m = match_streams(&audio, &visual).unwrap();
        let before = hyp_der(&reference, &audio);
        let muted = hyp_der(&reference, &fuse_scores(&audio, &visual, &m, true).unwrap());
        let plain = hyp_der(&reference, &fuse_scores(&audio, &visual, &m, false).unwrap());
        improved &= muted <= before && plain <= before;
        margins.push(before - muted);
    }

    let mut count_rule = true;
    for (s, sv) in [(2, 3), (3, 1), (1, 4), (4, 2)] {
        let a = ActivityMatrix::from_data(frames, s, shift, (0..frames * s).map(|_| rng.random()).collect()).unwrap();
        let v = ActivityMatrix::from_data(
            frames,
            sv,
            shift,
            (0..frames * sv)
                .map(|_| (rng.random::<f64>() < 0.5) as u8 as f64)
                .collect(),
        )
        .unwrap();
        let m = match_streams(&a, &v).unwrap();
        count_rule &= fuse_scores(&a, &v, &m, false).unwrap().speakers() == s.max(sv);
    }
    let mean_gain = margins.iter().sum::<f64>() / margins.len() as f64;
    Verdict::new(
        identity && improved && count_rule,
        format!(
            "empty visual identity: {identity}; fused <= audio DER on 20 cases: {improved} (mean gain {mean_gain:.2} points); max(S,S') rule: {count_rule}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b / rows.len() as f64);
    }
    m
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let nd = Normal::new(0.0, 1.0).unwrap();
    let (frames, shift, dim) = (300, 0.1, 16);
    let mut recovered = 0;
    let mut streams_ok = 0;
    let mut worst = (1.0f64, -1.0f64);
    let sets = 20;
    for _ in 0..sets {
        let mut bases: Vec<Vec<f64>> = Vec::new();
        while bases.len() < 3 {
            let mut v: Vec<f64> = (0..dim).map(|_| nd.sample(&mut rng)).collect();
            for b in &bases {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            bases.push(unit(v));
        }
        let mut tracks = Vec::new();
        let mut group_of = BTreeMap::new();
        for (gi, base) in bases.iter().enumerate() {
            for k in 0..rng.random_range(2..6) {
                let id = format!("g{gi}t{k}-{}", rng.random_range(0..1000));
                let start = rng.random_range(0.0..25.0f64);
                let n = rng.random_range(10..100);
                let frames_v: Vec<FaceFrame> = (0..n)
                    .map(|i| FaceFrame {
                        t: start + i as f64 * 0.04,
                        active: (rng.random::<f64>() < 0.7) as u8,
                    })
                    .collect();
                let embeddings: Vec<Vec<f64>> = (0..rng.random_range(1..8))
                    .map(|_| base.iter().map(|x| x + 0.03 * nd.sample(&mut rng)).collect())
                    .collect();
                group_of.insert(id.clone(), gi);
                tracks.push(FaceTrack {
                    track_id: id,
                    frames: frames_v,
                    embeddings,
                });
            }
        }
        // precondition on the track-level embeddings
        let means: Vec<(usize, Vec<f64>)> = tracks
            .iter()
            .map(|t| (group_of[&t.track_id], mean_rows(&t.embeddings)))
            .collect();
        for (i, (ga, a)) in means.iter().enumerate() {
            for (gb, b) in &means[i + 1..] {
                let c = cos(a, b);
                if ga == gb {
                    worst.0 = worst.0.min(c);
                } else {
                    worst.1 = worst.1.max(c);
                }
            }
        }
        tracks.shuffle(&mut rng);

        let res = cluster_tracks(&tracks, -0.5, 0).unwrap();
        let partition: BTreeSet<BTreeSet<String>> = res.clusters.iter().map(|c| c.iter().cloned().collect()).collect();
        let expected: BTreeSet<BTreeSet<String>> = (0..3)
            .map(|g| {
                group_of
                    .iter()
                    .filter(|(_, &v)| v == g)
                    .map(|(k, _)| k.clone())
                    .collect()
            })
            .collect();
        if partition == expected {
            recovered += 1;
        }

        let streams = clusters_to_streams(&res, &tracks, shift, frames).unwrap();
        let mut ok = true;
        for (k, members) in res.clusters.iter().enumerate() {
            for f in 0..frames {
                let c = (f as f64 + 0.5) * shift;
                let any = tracks.iter().filter(|t| members.contains(&t.track_id)).any(|t| {
                    t.frames.iter().enumerate().any(|(i, fr)| {
                        let next = t.frames.get(i + 1).map(|n| n.t).unwrap_or(fr.t + 0.04);
                        fr.active == 1 && fr.t <= c && c < next
                    })
                });
                ok &= (streams.get(f, k) == 1.0) == any;
            }
        }
        if ok {
            streams_ok += 1;
        }
    }
    let pre = worst.0 >= 0.9 && worst.1 <= 0.2;
    Verdict::new(
        pre && recovered == sets && streams_ok == sets,
        format!(
            "intra-cos >= {:.3}, inter-cos <= {:.3}; exact 3-group recovery {recovered}/{sets}; OR-union streams {streams_ok}/{sets}",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------- 8

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let ds = root.join("ds");
    let out = root.join("out");
    std::fs::create_dir_all(&out).unwrap();
    let sim = SimConfig {
        seed: 5,
        ..SimConfig::desk()
    };
    emit_dataset(&sim, &Corpus::synthetic(4, 11), 2, &ds).unwrap();
    let manifest = Manifest::load(&ds.join("manifest.json")).unwrap();
    let data = Dataset::from_manifest(&manifest).unwrap();
    let model = EendModel::new(ModelConfig::desk(Preset::Plusplus, data.n_classes()), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 3,
        eval_every: 1,
        thresholds: vec![0.4, 0.6],
        median_windows: vec![1, 5],
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    let trained = train(model, &data, None, &cfg, Some(&mut log)).unwrap();
    std::fs::write(root.join("train.jsonl"), &log).unwrap();
    save_model(&root.join("model.ckpt"), &trained.best).unwrap();

    let mut reference: Rttm = BTreeMap::new();
    let mut hypothesis: Rttm = BTreeMap::new();
    for (entry, ex) in manifest.entries.iter().zip(&data.examples) {
        let id = &entry.recording_id;
        let feats = load_features(&manifest.resolve(&entry.wav)).unwrap();
        let inf = trained.best.model.infer(&feats, None).unwrap();
        export_inference(&out.join(id), id, &inf, &trained.best.inference).unwrap();
        let tracks = synthesize_tracks(
            &ex.reference,
            &TrackSynthConfig {
                seed: 8,
                ..TrackSynthConfig::default()
            },
        )
        .unwrap();
        save_tracks(&out.join(format!("{id}.tracks.jsonl")), &tracks).unwrap();
        let clusters = cluster_tracks(&tracks, -0.5, 8).unwrap();
        let y = &inf.activity;
        let visual = clusters_to_streams(&clusters, &tracks, y.frame_shift_s(), y.frames()).unwrap();
        let fused = fuse_scores(y, &visual, &match_streams(y, &visual).unwrap(), true).unwrap();
        fused.save_csv(&out.join(format!("{id}.fused.csv"))).unwrap();
        let s = &trained.best.inference;
        let hyp = binarize(&fused, s.activity_threshold, s.median_frames).unwrap();
        save_rttm(&out.join(format!("{id}.fused.rttm")), id, &hyp).unwrap();
        reference.insert(id.clone(), ex.reference.clone());
        hypothesis.insert(id.clone(), hyp);
    }
    let report = score(&reference, &hypothesis, DER_COLLAR).unwrap();
    std::fs::write(root.join("score.json"), serde_json::to_vec_pretty(&report).unwrap()).unwrap();
    tree(root)
}

fn criterion_8() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = pipeline(a.path());
    let tb = pipeline(b.path());
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Verdict::new(
        differing.is_empty() && !ta.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", ta.len()),
    )
}

// ----------------------------------------------------------------

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient integrity", criterion_1),
        ("SinkPIT fidelity", criterion_2),
        ("overfit capability", criterion_3),
        ("scorer correctness", criterion_4),
        ("simulator statistics", criterion_5),
        ("fusion properties", criterion_6),
        ("V-AHC recovery", criterion_7),
        ("end-to-end determinism", criterion_8),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let verdicts: Vec<Option<Verdict>> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .enumerate()
            .map(|(i, (name, f))| {
                let wanted = filter.is_empty()
                    || filter
                        .iter()
                        .any(|p| name.to_lowercase().contains(p.as_str()) || *p == (i + 1).to_string());
                wanted.then(|| s.spawn(f))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.map(|h| h.join().unwrap_or_else(|_| Verdict::new(false, "panicked"))))
            .collect()
    });
    let mut failed = 0;
    for (i, ((name, _), v)) in criteria.iter().zip(&verdicts).enumerate() {
        if let Some(v) = v {
            println!(
                "criterion {} {name}: {} | {}",
                i + 1,
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            );
            failed += !v.pass as usize;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
