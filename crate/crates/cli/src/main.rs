use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avdiar::eval::{load_rttm, score};
use avdiar::fusion::{fuse_scores, fuse_tracks, match_streams};
use avdiar::model::{load_model, save_model};
use avdiar::simulator::emit_dataset;
use avdiar::trainer::{export_inference, load_features, save_embeddings, train, InferenceFiles};
use avdiar::visual::{cluster_tracks, clusters_to_streams, read_tracks, DEFAULT_THRESHOLD};
use avdiar::{ActivityMatrix, Corpus, Dataset, EendModel, Error, ModelConfig, Preset, Result, SimConfig, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};

/// Audio-visual speaker diarization pipeline.
///
/// File formats: activity matrices are CSV with a `t` column (frame start in
/// seconds) followed by `s0..s{S-1}` probabilities; face tracks are JSONL,
/// one `{"track_id", "frames": [{"t", "active"}], "embeddings": [[..]]}`
/// object per line; references and hypotheses are RTTM; checkpoints are
/// the binary format written by `train`; configs are JSON.
#[derive(Parser)]
#[command(name = "avdiar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FuseMode {
    /// Hungarian stream matching over the whole recording.
    Recording,
    /// Each face track overwrites its best-matching audio stream.
    Track,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled multi-speaker dataset (wav/, rttm/, labels/, manifest.json).
    Simulate {
        /// JSON simulation config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus directory or index, or `synthetic[:N]` for N generated speakers.
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a simulated manifest and write the best checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_preset)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Validation manifest; the training set is used when absent.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        /// JSON training config; flags above take precedence.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// JSON model config; defaults to the desk-scale model for the preset.
        #[arg(long, conflicts_with = "init")]
        model_config: Option<PathBuf>,
        /// Continue training from this checkpoint instead of a fresh model.
        /// Its preset must match `--preset`.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Per-epoch JSON-lines log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run inference on one recording and write activity, attractor,
    /// embedding CSVs and an RTTM next to `--out-prefix`.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// 16 kHz mono WAV, or a feature CSV (`t,f0,f1,...`).
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
        /// Overrides the checkpoint's activity threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Overrides the checkpoint's median-filter window (odd).
        #[arg(long)]
        median: Option<usize>,
        /// Decode exactly N speakers instead of estimating the count.
        #[arg(long)]
        oracle_speakers: Option<usize>,
    },
    /// Cluster face tracks and write one binary activity stream per cluster.
    Vahc {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        shift: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fuse audio activity with visual streams or face tracks.
    Fuse {
        #[arg(long)]
        audio: PathBuf,
        /// Binary stream CSV, or face tracks (`.jsonl`).
        #[arg(long)]
        visual: PathBuf,
        #[arg(long, value_enum)]
        mode: FuseMode,
        #[arg(long)]
        mute_others: bool,
        #[arg(long)]
        out: PathBuf,
        /// Clustering threshold when recording mode receives tracks.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a hypothesis RTTM against a reference RTTM (DER and JER, percent).
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        collar: f64,
        #[arg(long)]
        json: bool,
    },
    /// Write per-frame encoder embeddings as CSV.
    ExportEmb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open_corpus(spec: &str, seed: u64, min_speakers: usize) -> Result<Corpus> {
    match spec.strip_prefix("synthetic") {
        Some("") => Ok(Corpus::synthetic(min_speakers.max(10), seed)),
        Some(n) => {
            let n = n
                .strip_prefix(':')
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad synthetic corpus spec {spec:?}")))?;
            Ok(Corpus::synthetic(n, seed))
        }
        None => Corpus::open(Path::new(spec)),
    }
}

fn recording_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rec".into())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            config,
            corpus,
            out,
            n,
            seed,
        } => {
            let mut cfg: SimConfig = match config {
                Some(p) => read_json(&p)?,
                None => SimConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = open_corpus(&corpus, cfg.seed, cfg.n_speakers_max)?;
            let m = emit_dataset(&cfg, &corpus, n, &out)?;
            println!(
                "{} recordings -> {}",
                m.entries.len(),
                out.join("manifest.json").display()
            );
        }
        Command::Train {
            manifest,
            preset,
            out,
            epochs,
            seed,
            val_manifest,
            train_config,
            model_config,
            init,
            log,
        } => {
            let data = Dataset::load(&manifest)?;
            let val = val_manifest.map(|p| Dataset::load(&p)).transpose()?;
            let mut tc: TrainConfig = match train_config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.seed = seed.unwrap_or(tc.seed);
            let model = match init {
                Some(p) => {
                    let m = load_model(&p)?.model;
                    let c = m.config();
                    if (c.use_attention_eda, c.use_speaker_head) != preset.flags() {
                        return Err(Error::Config(format!(
                            "{} was not trained with preset {preset:?}",
                            p.display()
                        )));
                    }
                    m
                }
                None => {
                    let mc = match model_config {
                        Some(p) => read_json(&p)?,
                        None => ModelConfig {
                            input_dim: data.input_dim().unwrap_or(ModelConfig::desk(preset, 0).input_dim),
                            ..ModelConfig::desk(preset, data.n_classes())
                        },
                    };
                    EendModel::new(mc, tc.seed)?
                }
            };
            let mut sink = log
                .map(|p| File::create(&p).map(BufWriter::new).map_err(|e| io_err(&p, e)))
                .transpose()?;
            let outcome = train(
                model,
                &data,
                val.as_ref(),
                &tc,
                sink.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(mut w) = sink {
                w.flush().map_err(|e| io_err(Path::new("<train log>"), e))?;
            }
            save_model(&out, &outcome.best)?;
            let s = &outcome.best.inference;
            println!(
                "saved {} (val DER {}, threshold {}, median {})",
                out.display(),
                outcome
                    .best_val_der
                    .map(|d| format!("{d:.2}"))
                    .unwrap_or_else(|| "n/a".into()),
                s.activity_threshold,
                s.median_frames
            );
        }
        Command::Infer {
            model,
            wav,
            out_prefix,
            threshold,
            median,
            oracle_speakers,
        } => {
            let ckpt = load_model(&model)?;
            let feats = load_features(&wav)?;
            if let Some(dir) = out_prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            let inf = ckpt.model.infer(&feats, oracle_speakers)?;
            let mut settings = ckpt.inference;
            settings.activity_threshold = threshold.unwrap_or(settings.activity_threshold);
            settings.median_frames = median.unwrap_or(settings.median_frames);
            let InferenceFiles { rttm, .. } = export_inference(&out_prefix, &recording_id(&wav), &inf, &settings)?;
            println!("{} speakers -> {}", inf.activity.speakers(), rttm.display());
        }
        Command::Vahc {
            tracks,
            threshold,
            frames,
            shift,
            out,
            seed,
        } => {
            let tracks = read_tracks(&tracks)?;
            let clusters = cluster_tracks(&tracks, threshold, seed)?;
            clusters_to_streams(&clusters, &tracks, shift, frames)?.save_csv(&out)?;
            println!("{} tracks -> {} clusters", tracks.len(), clusters.n_clusters());
        }
        Command::Fuse {
            audio,
            visual,
            mode,
            mute_others,
            out,
            threshold,
            seed,
        } => {
            let a = ActivityMatrix::load_csv(&audio, 0.1)?;
            let is_tracks = visual.extension().is_some_and(|e| e == "jsonl" || e == "json");
            let fused = match (mode, is_tracks) {
                (FuseMode::Track, true) => fuse_tracks(&a, &read_tracks(&visual)?)?,
                (FuseMode::Track, false) => {
                    return Err(Error::Input("track mode needs face tracks (.jsonl)".into()));
                }
                (FuseMode::Recording, _) => {
                    let v = if is_tracks {
                        let tracks = read_tracks(&visual)?;
                        let clusters = cluster_tracks(&tracks, threshold, seed)?;
                        clusters_to_streams(&clusters, &tracks, a.frame_shift_s(), a.frames())?
                    } else {
                        ActivityMatrix::load_csv(&visual, a.frame_shift_s())?
                    };
                    let mapping = match_streams(&a, &v)?;
                    fuse_scores(&a, &v, &mapping, mute_others)?
                }
            };
            fused.save_csv(&out)?;
            println!("{} streams -> {}", fused.speakers(), out.display());
        }
        Command::Score {
            reference,
            hyp,
            collar,
            json,
        } => {
            let report = score(&load_rttm(&reference)?, &load_rttm(&hyp)?, collar)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::ExportEmb { model, wav, out } => {
            let ckpt = load_model(&model)?;
            let inf = ckpt.model.infer(&load_features(&wav)?, None)?;
            save_embeddings(&out, &inf)?;
            println!("{} frames -> {}", inf.embeddings.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
