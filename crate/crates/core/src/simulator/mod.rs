//! Multi-speaker mixture simulation with loudness-targeted noise and music.

mod config;
pub mod corpus;
pub mod plan;
pub mod render;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{LufsTargets, SimConfig};
pub use corpus::{Clip, Corpus};
pub use plan::{sample_plan, sample_speaker_count, BackgroundEvent, Joint, MixPlan, UtteranceEvent};
pub use render::{render, soft_limit, ClipLoudness, Rendered, SourceClass};

use crate::error::{Error, Result};
use crate::eval::save_rttm;

/// RNG for recording `index`: one ChaCha stream per recording.
pub fn recording_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub wav: PathBuf,
    pub rttm: PathBuf,
    /// JSON object mapping speaker id to corpus class (1-based).
    pub labels: PathBuf,
    pub speakers: Vec<String>,
}

/// Recording list; relative paths resolve against `root`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Manifest {
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            entries: serde_json::from_str(&text)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn load_labels(&self, e: &ManifestEntry) -> Result<BTreeMap<String, usize>> {
        let p = self.resolve(&e.labels);
        let text = std::fs::read_to_string(&p).map_err(|err| Error::io(&p, err))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Samples, renders and writes `n` recordings under `out_dir`
/// (`wav/`, `rttm/`, `labels/`, `manifest.json`).
pub fn emit_dataset(cfg: &SimConfig, corpus: &Corpus, n: usize, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let classes = corpus.class_labels();
    let mut manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries: Vec::with_capacity(n),
    };
    for i in 0..n {
        if i == 0 {
            for d in ["wav", "rttm", "labels"] {
                create_dir(&out_dir.join(d))?;
            }
        }
        let id = format!("rec{i:04}");
        let mut rng = recording_rng(cfg.seed, i as u64);
        let plan = sample_plan(cfg, corpus, &mut rng)?;
        let r = render(&plan, corpus, cfg)?;
        let entry = ManifestEntry {
            recording_id: id.clone(),
            wav: PathBuf::from(format!("wav/{id}.wav")),
            rttm: PathBuf::from(format!("rttm/{id}.rttm")),
            labels: PathBuf::from(format!("labels/{id}.json")),
            speakers: plan.speakers.clone(),
        };
        r.waveform.write_wav(&out_dir.join(&entry.wav))?;
        save_rttm(&out_dir.join(&entry.rttm), &id, &r.segments)?;
        let labels: BTreeMap<&String, usize> = plan.speakers.iter().map(|s| (s, classes[s])).collect();
        let lp = out_dir.join(&entry.labels);
        std::fs::write(&lp, serde_json::to_string(&labels)? + "\n").map_err(|e| Error::io(&lp, e))?;
        log::info!(
            "{id}: {} speakers, {} utterances",
            plan.speakers.len(),
            plan.utterances.len()
        );
        manifest.entries.push(entry);
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
