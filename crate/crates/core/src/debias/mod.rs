//! Propensity-corrected pairwise losses.
//!
//! Observed click pairs are distorted versions of relevance pairs:
//! `s(c_i, c_j) = B(e_i, e_j) s(r_i, r_j)`. Multiplying by the inverse of
//! `E[B]` (the [`PairCorrectionMatrix`]) removes the distortion in
//! expectation, which makes [`unbiased_loss`] an unbiased estimate of the
//! loss on true relevance.

mod lambda;
mod loss;
mod matrix;
mod table;

pub use lambda::{lambda_gradient, lambdas_with_hessian, Lambdas, PairWeightScheme};
pub(crate) use lambda::accumulate_lambdas;
pub use loss::{
    biased_loss, collection_biased_loss, collection_relevance_loss, collection_unbiased_loss,
    indicator_pair_loss, relevance_loss, unbiased_gradient, unbiased_loss, ComponentLoss, PairLoss,
};
pub use matrix::{
    apply_binary, b_matrix, correction_matrix, expected_b, matmul, pair_encoding, Mat4,
    PairCorrectionMatrix, PairEncoding, IDENTITY4,
};
pub use table::PropensityTable;
