//! Dense matrices, seeded random streams and gradient verification.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{
    finite_diff_grad, relative_error, Checked, GradReport, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
pub use matrix::{cosine, dot, norm, Matrix};
pub use rng::Rng;
