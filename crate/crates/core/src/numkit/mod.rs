//! Dense tensors, a reverse-mode tape, AdamW, and parameter checkpoints.
//!
//! All arithmetic is `f64`. The op set is deliberately small: the only
//! broadcast is a trailing-suffix add (biases and positional tables), and
//! everything else needs explicit reshapes.

pub mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheck, FD_STEP};
pub use optim::{AdamW, AdamWConfig, TrainSettings};
pub use params::{Bound, ParamStore};
pub use tape::{gelu, Gradients, Tape, Var, RMS_EPS};
pub use tensor::Tensor;

