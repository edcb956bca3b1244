//! Skeleton action recognition from joint-arrangement pseudo-images: a set
//! of mutually dissimilar joint orderings, one small vision transformer (or
//! CNN) per ordering, and an MLP that fuses their posteriors.

pub mod arrangement;
pub mod autodiff;
pub mod classifiers;
pub mod error;
pub mod harness;
pub mod pseudo_image;
pub mod seed;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};

// Training allocates and frees large activation buffers every step.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
