//! Numerical core for spectral-attention multimodal fusion and SLAM evaluation.
//!
//! The crate is organized around a small set of independent subsystems:
//!
//! * [`tensor`] / [`nn`] — dense row-major tensors, the `FMFT` binary
//!   container, layer normalization and 2D convolution.
//! * [`spectral`] — real 2D FFT with half-spectrum storage and circular
//!   cross-correlation computed in the frequency domain, together with the
//!   quadratic direct-summation reference used to validate it.
//! * [`attention`] — Fourier self-attention and bidirectional cross-attention
//!   built from the spectral correlation primitive, plus the two-branch
//!   RGB/depth encoder pipeline.
//! * [`distill`] — feature-level distillation losses between the two
//!   branches, their analytic gradients, and a gradient-descent demo.
//! * [`geometry`] — SE(3) poses with exp/log maps and the pose / optical-flow
//!   supervision losses.
//! * [`ekf`] — extended Kalman filter fusing visual and GNSS position
//!   streams.
//! * [`trajectory`] — TUM trajectory I/O, time association, Umeyama
//!   alignment, and the evaluation metrics (ATE, flow accuracy, pose
//!   accuracy, loop accumulation error).
//! * [`bench`] — wall-clock and operation-count scaling comparison between
//!   the spectral and direct correlation paths.
//!
//! All operations are pure functions of their inputs. Reductions run in a
//! fixed index order so repeated runs are bit-identical.

pub mod attention;
pub mod bench;
pub mod counters;
pub mod distill;
pub mod ekf;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod real;
pub mod spectral;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use tensor::{DynTensor, FeatureMap, Tensor};
