//! Special functions and small dense linear algebra shared by every stage.

mod gamma;
mod linalg;
mod normal;

pub use gamma::{
    chi_square_quantile, inverse_regularized_gamma_q, inverse_regularized_gamma_q_ln, ln_gamma,
    ln_regularized_gamma_q, ln_upper_incomplete_gamma, regularized_gamma_p, regularized_gamma_q,
    upper_incomplete_gamma,
};
pub use linalg::{cholesky, inverse, pair_eigen, spd_inverse, symmetric_eigen, EigenPairs, SpdMatrix};
pub use normal::{normal_quantile, std_normal_cdf};
