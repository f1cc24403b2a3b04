use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{binarize, save_rttm};
use crate::frontend::{model_features, FeatureSequence, Waveform};
use crate::model::{Inference, InferenceSettings};

/// Paths written by [`export_inference`].
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceFiles {
    pub activity: PathBuf,
    pub attractors: PathBuf,
    pub embeddings: PathBuf,
    pub rttm: PathBuf,
}

impl InferenceFiles {
    pub fn for_prefix(prefix: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        InferenceFiles {
            activity: with(".activity.csv"),
            attractors: with(".attractors.csv"),
            embeddings: with(".embeddings.csv"),
            rttm: with(".rttm"),
        }
    }
}

/// Model features from a 16 kHz WAV, or a feature CSV (`t,f0,f1,...`).
pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut rd = csv::Reader::from_path(path)?;
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let vals = rec?
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: e.to_string(),
                })?;
            let (t, f) = vals
                .split_first()
                .ok_or_else(|| Error::Input("empty feature row".into()))?;
            times.push(*t);
            rows.push(f.to_vec());
        }
        let shift = if times.len() >= 2 { times[1] - times[0] } else { 0.1 };
        FeatureSequence::new(rows, shift)
    } else {
        model_features(&Waveform::read_wav(path)?)
    }
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Frame embeddings as CSV: `t,e0,...,e{D-1}`.
pub fn save_embeddings(path: &Path, inf: &Inference) -> Result<()> {
    let shift = inf.activity.frame_shift_s();
    let edim = inf.embeddings.first().map(Vec::len).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((0..edim).map(|d| format!("e{d}")));
    write_rows(
        path,
        header,
        inf.embeddings.iter().enumerate().map(|(t, e)| {
            let mut r = vec![format!("{:.3}", t as f64 * shift)];
            r.extend(e.iter().copied().map(fmt));
            r
        }),
    )
}

/// Writes activity, attractor and frame-embedding CSVs plus an RTTM
/// hypothesis binarized with `settings`.
pub fn export_inference(
    prefix: &Path,
    recording_id: &str,
    inf: &Inference,
    settings: &InferenceSettings,
) -> Result<InferenceFiles> {
    let files = InferenceFiles::for_prefix(prefix);
    inf.activity.save_csv(&files.activity)?;

    let a = &inf.attractors;
    let dim = a.attractors.first().map(Vec::len).unwrap_or(0);
    let n_cls = a
        .speaker_posteriors
        .as_ref()
        .and_then(|p| p.first())
        .map(Vec::len)
        .unwrap_or(0);
    let mut header = vec!["attractor".to_string(), "existence".to_string()];
    header.extend((0..dim).map(|d| format!("a{d}")));
    header.extend((0..n_cls).map(|c| format!("p{c}")));
    write_rows(
        &files.attractors,
        header,
        (0..a.len()).map(|i| {
            let mut r = vec![i.to_string(), fmt(a.existence_probs[i])];
            r.extend(a.attractors[i].iter().copied().map(fmt));
            if let Some(p) = &a.speaker_posteriors {
                r.extend(p[i].iter().copied().map(fmt));
            }
            r
        }),
    )?;

    save_embeddings(&files.embeddings, inf)?;

    let hyp = binarize(&inf.activity, settings.activity_threshold, settings.median_frames)?;
    save_rttm(&files.rttm, recording_id, &hyp)?;
    Ok(files)
}
