//! Progressive adversarial architecture: mirrored generator/discriminator
//! pairs, fade-in growth, adversarial losses, and the differentiable
//! measurement stage that sits between generator and discriminator.

pub mod loss;
pub mod net;
pub mod pipeline;
pub mod schedule;

pub use loss::{loss_discriminator, loss_generator, LossVariant};
pub use net::{Discriminator, Generator, NetConfig, ParamSet, StagedParams};
pub use pipeline::{synth_measurement_path, RealPyramid};
pub use schedule::{level_of, resolution, FadeState, Phase, ProgressiveSchedule};
