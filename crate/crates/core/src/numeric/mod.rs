//! Dense matrices, recorded forward passes and reverse-mode gradients.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use matrix::{Axis, Matrix};
pub use params::{Param, ParamStore};
pub use tape::{Gradients, Tape, Var};
