//! Style diffusion sampling and differentiable duration upsampling at desk
//! scale.
//!
//! The diffusion half covers noise schedules, EDM preconditioning, analytic
//! and fitted denoisers, and Euler / Heun / ancestral DPM-2 samplers. The
//! duration half covers duration-probability matrices, the hard, Gaussian
//! and differentiable upsamplers, and the analytic gradient of the latter.

pub mod denoiser;
pub mod duration;
pub mod error;
pub mod longform;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod table;

pub use denoiser::{
    edm_loss, fit_linear_denoiser, mixture_responsibilities, ConditioningVector, DenoiserSpec,
    EdmDraws, FitSpace, LinearBucket, LinearFit, MixtureComponent, StyleVector,
};
pub use error::{Error, Result};
pub use longform::{interpolate_style, longform_styles, LongformConfig};
pub use metrics::{
    alignment_distortion, coefficient_of_variation, energy_distance, moment_report, MetricReport,
};
pub use sampler::{
    ancestral_split, integrate, sample_styles, AncestralSplit, SampleBatch, SamplerConfig,
    SamplerMethod,
};
pub use schedule::{
    karras_schedule, loss_weight, precondition, Preconditioning, ScheduleParams, SigmaSchedule,
    TrainingSigmaDist, SIGMA_DATA,
};
