//! Dense arithmetic, the deterministic RNG, and the special functions the
//! estimators and the toy model rely on.

mod matrix;
mod rng;
mod special;

pub use matrix::{
    dot, layer_norm, layer_norm_row, matmul, matmul_transposed, softmax_in_place, softmax_rows,
    vecmat, Matrix,
};
pub use rng::Rng;
pub use special::{digamma, ln_gamma, log_unit_ball_volume};
