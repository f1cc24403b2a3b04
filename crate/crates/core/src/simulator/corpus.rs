//! Source clips for simulation: speech per speaker, plus noise and music.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::frontend::{Waveform, SAMPLE_RATE};

#[derive(Debug, Clone)]
pub enum ClipSource {
    File(PathBuf),
    Memory(Arc<Waveform>),
}

#[derive(Debug, Clone)]
pub struct Clip {
    pub name: String,
    pub source: ClipSource,
    pub n_samples: usize,
}

impl Clip {
    pub fn from_file(path: &Path) -> Result<Self> {
        let reader = hound::WavReader::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
            return Err(Error::Input(format!(
                "{}: need 16 kHz mono, found {} Hz with {} channels",
                path.display(),
                spec.sample_rate,
                spec.channels
            )));
        }
        Ok(Clip {
            name: path.display().to_string(),
            source: ClipSource::File(path.to_path_buf()),
            n_samples: reader.duration() as usize,
        })
    }

    pub fn in_memory(name: impl Into<String>, w: Waveform) -> Self {
        Clip {
            name: name.into(),
            n_samples: w.len(),
            source: ClipSource::Memory(Arc::new(w)),
        }
    }

    /// Length in whole milliseconds.
    pub fn len_ms(&self) -> u64 {
        (self.n_samples / (SAMPLE_RATE as usize / 1000)) as u64
    }

    pub fn load(&self) -> Result<Arc<Waveform>> {
        match &self.source {
            ClipSource::Memory(w) => Ok(w.clone()),
            ClipSource::File(p) => Waveform::read_wav(p)
                .map(Arc::new)
                .map_err(|e| Error::Input(format!("cannot read source {}: {e}", p.display()))),
        }
    }
}

/// Speakers are kept sorted by id; that order defines corpus class labels.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub speakers: Vec<(String, Vec<Clip>)>,
    pub noise: Vec<Clip>,
    pub music: Vec<Clip>,
}

#[derive(Deserialize)]
struct Index {
    speakers: BTreeMap<String, Vec<PathBuf>>,
    #[serde(default)]
    noise: Vec<PathBuf>,
    #[serde(default)]
    music: Vec<PathBuf>,
}

fn wavs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

impl Corpus {
    /// A directory (`<speaker>/*.wav`, plus optional `_noise/` and `_music/`)
    /// or a JSON index `{"speakers": {id: [wav]}, "noise": [..], "music": [..]}`
    /// whose paths are relative to the index file.
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Self::from_dir(path)
        } else {
            Self::from_index(path)
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        let mut c = Corpus::default();
        for sub in entries {
            let name = sub.file_name().unwrap().to_string_lossy().to_string();
            let clips = wavs_in(&sub)?
                .iter()
                .map(|p| Clip::from_file(p))
                .collect::<Result<Vec<_>>>()?;
            match name.as_str() {
                "_noise" => c.noise = clips,
                "_music" => c.music = clips,
                _ if !clips.is_empty() => c.speakers.push((name, clips)),
                _ => log::warn!("speaker directory {} has no wav files", sub.display()),
            }
        }
        Ok(c)
    }

    pub fn from_index(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let idx: Index = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let clips = |v: &[PathBuf]| {
            v.iter()
                .map(|p| Clip::from_file(&base.join(p)))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Corpus {
            speakers: idx
                .speakers
                .iter()
                .map(|(id, v)| Ok((id.clone(), clips(v)?)))
                .collect::<Result<_>>()?,
            noise: clips(&idx.noise)?,
            music: clips(&idx.music)?,
        })
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.speakers.iter().map(|(s, _)| s.clone()).collect()
    }

    /// Class label (1-based, sorted-id order) of every speaker.
    pub fn class_labels(&self) -> BTreeMap<String, usize> {
        self.speakers
            .iter()
            .enumerate()
            .map(|(i, (s, _))| (s.clone(), i + 1))
            .collect()
    }

    /// Partitions speakers into disjoint train and test corpora; both keep
    /// the full noise and music pools.
    pub fn split(&self, n_test: usize, seed: u64) -> Result<(Corpus, Corpus)> {
        if n_test > self.speakers.len() {
            return Err(Error::Config(format!(
                "cannot hold out {n_test} of {} speakers",
                self.speakers.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.speakers.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test_idx = idx[..n_test].to_vec();
        test_idx.sort_unstable();
        let pick = |keep: &dyn Fn(usize) -> bool| Corpus {
            speakers: (0..self.speakers.len())
                .filter(|&i| keep(i))
                .map(|i| self.speakers[i].clone())
                .collect(),
            noise: self.noise.clone(),
            music: self.music.clone(),
        };
        Ok((pick(&|i| !test_idx.contains(&i)), pick(&|i| test_idx.contains(&i))))
    }

    /// Writes the corpus in directory layout.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let dump = |sub: &str, clips: &[Clip]| -> Result<()> {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            for (i, c) in clips.iter().enumerate() {
                c.load()?.write_wav(&d.join(format!("{i:03}.wav")))?;
            }
            Ok(())
        };
        for (spk, clips) in &self.speakers {
            dump(spk, clips)?;
        }
        dump("_noise", &self.noise)?;
        dump("_music", &self.music)
    }

    /// Synthetic corpus: each speaker has a fixed pitch, formant set and
    /// syllable rate; noise is coloured and impulsive; music is chord
    /// sequences.
    pub fn synthetic(n_speakers: usize, seed: u64) -> Self {
        let mut c = Corpus::default();
        for k in 0..n_speakers {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let voice = Voice::random(&mut rng);
            let clips = (0..3)
                .map(|j| {
                    let secs = rng.random_range(2.0..6.0);
                    Clip::in_memory(format!("synthetic:spk{k:03}/{j}"), voice.render(secs, &mut rng))
                })
                .collect();
            c.speakers.push((format!("spk{k:03}"), clips));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x006e_6f69_7365);
        c.noise = (0..6)
            .map(|j| Clip::in_memory(format!("synthetic:noise/{j}"), synth_noise(j, 12.0, &mut rng)))
            .collect();
        c.music = (0..4)
            .map(|j| Clip::in_memory(format!("synthetic:music/{j}"), synth_music(12.0, &mut rng)))
            .collect();
        c
    }
}

struct Voice {
    f0: f64,
    formants: [(f64, f64); 3],
    syllable_hz: f64,
    vibrato_hz: f64,
}

impl Voice {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Voice {
            f0: rng.random_range(85.0..260.0),
            formants: [
                (rng.random_range(300.0..850.0), rng.random_range(60.0..120.0)),
                (rng.random_range(900.0..2300.0), rng.random_range(80.0..160.0)),
                (rng.random_range(2300.0..3400.0), rng.random_range(120.0..250.0)),
            ],
            syllable_hz: rng.random_range(3.0..6.0),
            vibrato_hz: rng.random_range(0.3..1.2),
        }
    }

    fn envelope(&self, f: f64) -> f64 {
        self.formants
            .iter()
            .map(|&(c, bw)| (-0.5 * ((f - c) / bw).powi(2)).exp())
            .sum::<f64>()
            + 0.05
    }

    fn render(&self, secs: f64, rng: &mut ChaCha8Rng) -> Waveform {
        let sr = SAMPLE_RATE as f64;
        let n = (secs * sr) as usize;
        let n_harm = ((3800.0 / self.f0) as usize).min(30);
        let amps: Vec<f64> = (1..=n_harm)
            .map(|h| self.envelope(h as f64 * self.f0) / (h as f64).sqrt())
            .collect();
        let phase0: Vec<(f64, f64)> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI).sin_cos()).collect();
        let (vib_phase, syl_phase) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let mut phase = 0.0;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                let f = self.f0 * (1.0 + 0.06 * (2.0 * PI * self.vibrato_hz * t + vib_phase).sin());
                phase += 2.0 * PI * f / sr;
                // harmonic h at angle h*phase, stepped by complex rotation
                let (s1, c1) = phase.sin_cos();
                let (mut sh, mut ch) = (s1, c1);
                let mut voiced = 0.0;
                for (a, (sp, cp)) in amps.iter().zip(&phase0) {
                    voiced += a * (sh * cp + ch * sp);
                    (sh, ch) = (sh * c1 + ch * s1, ch * c1 - sh * s1);
                }
                let am = 0.35 + 0.65 * (PI * self.syllable_hz * t + syl_phase).sin().abs();
                0.1 * am * voiced + 0.003 * rng.random_range(-1.0..1.0)
            })
            .collect();
        Waveform::new(samples, SAMPLE_RATE).expect("synthetic speech is finite")
    }
}

fn synth_noise(kind: usize, secs: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let n = (secs * SAMPLE_RATE as f64) as usize;
    // one-pole smoothing coefficient sets the spectral tilt
    let pole = [0.0, 0.6, 0.95, 0.3, 0.85, 0.99][kind % 6];
    let mut state = 0.0;
    let samples = (0..n)
        .map(|_| {
            let w: f64 = rng.random_range(-1.0..1.0);
            state = pole * state + (1.0 - pole) * w;
            let click = if kind % 3 == 2 && rng.random::<f64>() < 2e-4 {
                rng.random_range(-0.8..0.8)
            } else {
                0.0
            };
            0.3 * state + click
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE).expect("synthetic noise is finite")
}

fn synth_music(secs: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    let n = (secs * sr) as usize;
    let beat = rng.random_range(0.3..0.8);
    let n_beats = (secs / beat) as usize + 1;
    let chords: Vec<[f64; 3]> = (0..n_beats)
        .map(|_| {
            let root = 48 + rng.random_range(0..24);
            let third = if rng.random::<bool>() { 4 } else { 3 };
            [root, root + third, root + 7].map(|m| 440.0 * 2f64.powf((m as f64 - 69.0) / 12.0))
        })
        .collect();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let b = (t / beat) as usize;
            let within = t - b as f64 * beat;
            let decay = (-3.0 * within / beat).exp();
            0.1 * decay * chords[b].iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f64>()
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE).expect("synthetic music is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_corpus_is_deterministic_and_sorted() {
        let a = Corpus::synthetic(4, 3);
        let b = Corpus::synthetic(4, 3);
        assert_eq!(a.speaker_ids(), vec!["spk000", "spk001", "spk002", "spk003"]);
        let wa = a.speakers[2].1[1].load().unwrap();
        let wb = b.speakers[2].1[1].load().unwrap();
        assert_eq!(wa.samples(), wb.samples());
        assert!(wa.samples().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn split_is_disjoint() {
        let c = Corpus::synthetic(10, 1);
        let (tr, te) = c.split(3, 5).unwrap();
        assert_eq!((tr.speakers.len(), te.speakers.len()), (7, 3));
        for id in te.speaker_ids() {
            assert!(!tr.speaker_ids().contains(&id));
        }
        assert!(c.split(11, 0).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::synthetic(2, 9);
        c.write_dir(dir.path()).unwrap();
        let back = Corpus::open(dir.path()).unwrap();
        assert_eq!(back.speaker_ids(), c.speaker_ids());
        assert_eq!(back.noise.len(), 6);
        assert_eq!(back.speakers[0].1[0].n_samples, c.speakers[0].1[0].n_samples);
    }
}
