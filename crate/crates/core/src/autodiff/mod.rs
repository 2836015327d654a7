//! Reverse-mode automatic differentiation on rank-2 f64 tensors, the Adam
//! optimizer, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, GradReport};
pub use tensor::{focal_term, softmax_row, Tensor};
