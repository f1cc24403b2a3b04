//! Visual-centric clustering of face tracks into per-person speech streams.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActivityMatrix, SegmentList};

pub const DEFAULT_THRESHOLD: f64 = -0.5;
pub const MAX_EMBEDDING_FRAMES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceFrame {
    pub t: f64,
    pub active: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTrack {
    pub track_id: String,
    pub frames: Vec<FaceFrame>,
    pub embeddings: Vec<Vec<f64>>,
}

impl FaceTrack {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(format!("track {}: {m}", self.track_id)));
        if self.embeddings.is_empty() {
            return bad("no embeddings");
        }
        let dim = self.embeddings[0].len();
        if dim == 0
            || self
                .embeddings
                .iter()
                .any(|e| e.len() != dim || e.iter().any(|v| !v.is_finite()))
        {
            return bad("embeddings must be non-empty, finite and of equal dimension");
        }
        if self.frames.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return bad("frame times must be strictly increasing");
        }
        if self.frames.iter().any(|f| f.active > 1 || !f.t.is_finite()) {
            return bad("activity marks must be 0 or 1");
        }
        Ok(())
    }

    /// Half-open time spans `[t_k, t_k + dt_k)` of the active frames; the
    /// last frame reuses the previous spacing (or `default_dt` if alone).
    pub fn active_spans(&self, default_dt: f64) -> Vec<(f64, f64)> {
        let n = self.frames.len();
        (0..n)
            .filter(|&k| self.frames[k].active == 1)
            .map(|k| {
                let dt = if k + 1 < n {
                    self.frames[k + 1].t - self.frames[k].t
                } else if k > 0 {
                    self.frames[k].t - self.frames[k - 1].t
                } else {
                    default_dt
                };
                (self.frames[k].t, self.frames[k].t + dt)
            })
            .collect()
    }
}

pub fn read_tracks(path: &Path) -> Result<Vec<FaceTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let track: FaceTrack = serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            track.validate()?;
            Ok(track)
        })
        .collect()
}

pub fn write_tracks<W: Write>(mut w: W, tracks: &[FaceTrack]) -> Result<()> {
    for t in tracks {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w).map_err(|e| Error::io("<tracks>", e))?;
    }
    Ok(())
}

pub fn save_tracks(path: &Path, tracks: &[FaceTrack]) -> Result<()> {
    let mut buf = Vec::new();
    write_tracks(&mut buf, tracks)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::Input("cannot normalize a zero embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Unit-norm mean of up to `max_frames` randomly chosen frame embeddings.
pub fn track_embedding(track: &FaceTrack, max_frames: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    track.validate()?;
    let n = track.embeddings.len();
    let picked: Vec<usize> = if n <= max_frames {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, max_frames).into_vec();
        v.sort_unstable();
        v
    };
    let dim = track.embeddings[0].len();
    let mut mean = vec![0.0; dim];
    for &i in &picked {
        for (m, x) in mean.iter_mut().zip(&track.embeddings[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= picked.len() as f64);
    normalize(mean)
}

/// Track-to-cluster assignment. Clusters are numbered by their
/// lexicographically smallest member id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub assignment: BTreeMap<String, usize>,
    pub clusters: Vec<Vec<String>>,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

fn neg_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    -dot / (na * nb)
}

/// Average-linkage agglomeration on negative cosine similarity; merging
/// stops once the closest pair is farther than `threshold`. Equal linkages
/// merge the pair with the smallest (min-id, min-id) key first.
pub fn ahc_cluster(embeddings: &[(String, Vec<f64>)], threshold: f64) -> Result<ClusterResult> {
    let mut items: Vec<&(String, Vec<f64>)> = embeddings.iter().collect();
    items.sort_by(|a, b| a.0.cmp(&b.0));
    if items.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Input("duplicate track id".into()));
    }
    let n = items.len();
    // cluster members by sorted-index; a cluster's key is its first member
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut link: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| neg_cos(&items[i].1, &items[j].1)).collect())
        .collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                if best.is_none_or(|(d, _, _)| link[i][j] < d) {
                    best = Some((link[i][j], i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        if d > threshold {
            break;
        }
        let mj = members[j].take().unwrap();
        let (ni, nj) = (members[i].as_ref().unwrap().len() as f64, mj.len() as f64);
        for k in 0..n {
            if members[k].is_some() && k != i {
                let v = (ni * link[i][k] + nj * link[j][k]) / (ni + nj);
                link[i][k] = v;
                link[k][i] = v;
            }
        }
        let mi = members[i].as_mut().unwrap();
        mi.extend(mj);
        mi.sort_unstable();
    }
    let clusters: Vec<Vec<String>> = members
        .into_iter()
        .flatten()
        .map(|m| m.into_iter().map(|i| items[i].0.clone()).collect())
        .collect();
    let assignment = clusters
        .iter()
        .enumerate()
        .flat_map(|(k, c)| c.iter().map(move |id| (id.clone(), k)))
        .collect();
    Ok(ClusterResult { assignment, clusters })
}

/// Embeds and clusters a track set in one step.
pub fn cluster_tracks(tracks: &[FaceTrack], threshold: f64, seed: u64) -> Result<ClusterResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embs = tracks
        .iter()
        .map(|t| Ok((t.track_id.clone(), track_embedding(t, MAX_EMBEDDING_FRAMES, &mut rng)?)))
        .collect::<Result<Vec<_>>>()?;
    ahc_cluster(&embs, threshold)
}

/// Frame-level activity of one track: frame `t` is active when its centre
/// falls in an active span.
pub fn track_activity(track: &FaceTrack, frame_shift_s: f64, frames: usize) -> Vec<bool> {
    let mut on = vec![false; frames];
    for (a, b) in track.active_spans(frame_shift_s) {
        let first = ((a / frame_shift_s) - 0.5).ceil().max(0.0) as usize;
        for (t, slot) in on.iter_mut().enumerate().skip(first) {
            let c = (t as f64 + 0.5) * frame_shift_s;
            if c >= b {
                break;
            }
            if c >= a {
                *slot = true;
            }
        }
    }
    on
}

/// Binary stream per cluster: the OR of its member tracks' activity.
pub fn clusters_to_streams(
    clusters: &ClusterResult,
    tracks: &[FaceTrack],
    frame_shift_s: f64,
    frames: usize,
) -> Result<ActivityMatrix> {
    let mut y = ActivityMatrix::zeros(frames, clusters.n_clusters(), frame_shift_s);
    for track in tracks {
        let k = *clusters
            .assignment
            .get(&track.track_id)
            .ok_or_else(|| Error::Input(format!("track {} is not clustered", track.track_id)))?;
        for (t, on) in track_activity(track, frame_shift_s, frames).into_iter().enumerate() {
            if on {
                y.set(t, k, 1.0);
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSynthConfig {
    pub fps: f64,
    pub embedding_dim: usize,
    /// Per-dimension Gaussian jitter on frame embeddings.
    pub noise_std: f64,
    /// Face visible this long before and after each speech segment.
    pub pad_s: f64,
    /// Probability that a segment of an on-screen speaker is visible.
    pub visibility: f64,
    /// Speakers that can appear on screen; `None` means all.
    pub on_screen: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for TrackSynthConfig {
    fn default() -> Self {
        TrackSynthConfig {
            fps: 25.0,
            embedding_dim: 32,
            noise_std: 0.05,
            pad_s: 0.3,
            visibility: 1.0,
            on_screen: None,
            seed: 0,
        }
    }
}

/// Orthonormal random directions, one per speaker.
fn identity_directions(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if n > dim {
        return Err(Error::Config(format!(
            "{n} identities need embedding_dim >= {n}, got {dim}"
        )));
    }
    let nd = Normal::new(0.0, 1.0).unwrap();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| nd.sample(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if let Ok(u) = normalize(v) {
            basis.push(u);
        }
    }
    Ok(basis)
}

/// Face tracks consistent with a reference segmentation: one track per
/// merged speech interval of each on-screen speaker, active exactly during
/// speech, with noisy copies of a per-speaker identity embedding.
pub fn synthesize_tracks(reference: &SegmentList, cfg: &TrackSynthConfig) -> Result<Vec<FaceTrack>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let merged = reference.merged_by_speaker();
    let dirs = identity_directions(merged.len(), cfg.embedding_dim, &mut rng)?;
    let nd = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let dt = 1.0 / cfg.fps;
    let mut tracks = Vec::new();
    for ((spk, spans), dir) in merged.iter().zip(&dirs) {
        if cfg.on_screen.as_ref().is_some_and(|v| !v.contains(spk)) {
            continue;
        }
        for (i, &(on, off)) in spans.iter().enumerate() {
            if rand::Rng::random::<f64>(&mut rng) >= cfg.visibility {
                continue;
            }
            let start = (on - cfg.pad_s).max(0.0);
            let n = ((off + cfg.pad_s - start) / dt).ceil() as usize;
            let frames: Vec<FaceFrame> = (0..n)
                .map(|k| {
                    let t = start + k as f64 * dt;
                    FaceFrame {
                        t: (t * 1e6).round() / 1e6,
                        active: u8::from(t >= on && t < off),
                    }
                })
                .collect();
            let embeddings = (0..n)
                .map(|_| dir.iter().map(|d| d + nd.sample(&mut rng)).collect())
                .collect();
            tracks.push(FaceTrack {
                track_id: format!("{spk}-{i:03}"),
                frames,
                embeddings,
            });
        }
    }
    Ok(tracks)
}
