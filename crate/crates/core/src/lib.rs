//! Right-of-way recognition from a buffer of traffic-light frames.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape, Adam and a
//!   finite-difference gradient checker.
//! * [`attention`]: multi-head attention, bilinear sampling, deformable
//!   attention and the encoder layer that walks the image buffer.
//! * [`arcdecoder`]: the multi-centre angular-margin class decoder.
//! * [`model`]: residual backbone, buffer loop, checkpoints.
//! * [`datakit`]: labels, sequence windowing, synthetic scenes and files.
//! * [`trainkit`]: losses, the training loop and evaluation metrics.
//! * [`gradsuite`]: finite-difference checks of each building block.

pub mod error;
pub mod arcdecoder;
pub mod attention;
pub mod datakit;
pub mod gradsuite;
pub mod model;
pub mod tensor;
pub mod trainkit;

pub use error::{Error, ErrorKind, Result};
