//! Attention-based deep state-space model (ADSSM) for translating PPG pulse
//! intervals into ECG waveform segments.
//!
//! The crate covers the whole pipeline: preprocessing ([`signals`]),
//! synthetic paired records ([`synth`]), the variational model and its exact
//! gradients ([`model`]), Adam training with KL annealing ([`training`]),
//! generation with uncertainty bands ([`translate`]) and the similarity
//! metrics ([`metrics`]).

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod seed;
pub mod model;
pub mod signals;
pub mod synth;
pub mod training;
pub mod translate;

pub use error::{Error, Result};
pub use model::{Dims, ElboBreakdown, LatentPath, ModelOptions, ParameterSet};
pub use signals::{IntervalSequence, NoiseSpec, PeakList, Waveform};
pub use training::{OptimizerState, Schedule, TrainState};
pub use translate::Translation;
