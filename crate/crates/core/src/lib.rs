//! Audio-visual speaker diarization toolkit.

// `!(x > 0.0)` is how NaN gets rejected; index loops mirror the math.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod assign;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod fusion;
pub mod losses;
pub mod loudness;
pub mod model;
pub mod simulator;
pub mod tensor;
pub mod trainer;
pub mod types;
pub mod visual;

pub use error::{Error, Result};
pub use eval::ScoreReport;
pub use frontend::{FeatureSequence, Waveform};
pub use model::{AttractorSet, Checkpoint, EendModel, InferenceSettings, ModelConfig, Preset};
pub use simulator::{Corpus, Manifest, MixPlan, SimConfig};
pub use tensor::{Axis, Graph, Tensor, Var};
pub use trainer::{Dataset, TrainConfig};
pub use types::{ActivityMatrix, Segment, SegmentList};
pub use visual::{ClusterResult, FaceTrack};
