//! Numeric substrate: dense f64 tensors, a reverse-mode tape, Adam, and a
//! deterministic PRNG. Everything above this module is plain model code.

pub mod adam;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use rng::Xoshiro256pp;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
