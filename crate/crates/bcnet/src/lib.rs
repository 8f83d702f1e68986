//! Bilayer occluder/occludee mask head with a graph-convolution non-local
//! block, a minimal reverse-mode autodiff engine, a deterministic synthetic
//! occlusion dataset, and training / evaluation / ablation drivers.
//!
//! Everything runs on the CPU with no external numeric dependencies; see
//! the `examples/` directory for one runnable entry point per capability
//! and `src/bin/bcnet.rs` for the thin command-line front end.

pub mod checkpoint;
pub mod crc32;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod head;
pub mod loss;
pub mod params;
pub mod pnm;
pub mod reference;
pub mod synth;
pub mod tensor;
pub mod train;

/// Epsilon used by every layer-norm in the model.
pub const LN_EPS: f32 = 1e-5;
