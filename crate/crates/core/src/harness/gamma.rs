//! Empirical fraction of missing information from complete-data and
//! observed-data estimates across replications.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::Design;
use super::{draw_replicate, MAX_ATTEMPTS};
use crate::error::{Error, Result};
use crate::estimation::{fit_regression_complete_cases, fit_regression_ml};
use crate::numerics::{inverse, pair_eigen, SpdMatrix};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGamma {
    pub design: Design,
    pub replications: usize,
    pub degenerate: usize,
    pub v_comp: SpdMatrix,
    pub v_obs: SpdMatrix,
    /// `I − V_obs⁻¹·V_comp`.
    pub gamma_mis_emp: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
}

impl EmpiricalGamma {
    /// Predicted variance of the ML-imputation point estimate with `d`
    /// imputations: `V_obs + V_comp·γ_mis / d`.
    pub fn predicted_ml_variance(&self, d: usize) -> DMatrix<f64> {
        let between = self.v_comp.as_matrix() * &self.gamma_mis_emp;
        self.v_obs.as_matrix() + between / d as f64
    }
}

struct Pair {
    comp: DVector<f64>,
    obs: DVector<f64>,
    skipped: usize,
}

fn one_replicate(design: &Design, stream: SeedStream) -> Result<Pair> {
    for attempt in 0..MAX_ATTEMPTS {
        let (complete, incomplete) = draw_replicate(design, stream.child(attempt as u64))?;
        if incomplete.complete_rows() < 3 {
            continue;
        }
        let comp = fit_regression_ml(&complete, 1, &[0]);
        let obs = fit_regression_complete_cases(&incomplete, 1, &[0]);
        match (comp, obs) {
            (Ok(c), Ok(o)) => return Ok(Pair { comp: c.theta, obs: o.theta, skipped: attempt }),
            (Err(Error::Degenerate(_)), _) | (_, Err(Error::Degenerate(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Err(Error::Degenerate(format!("{MAX_ATTEMPTS} consecutive degenerate draws")))
}

fn covariance(rows: &[DVector<f64>]) -> SpdMatrix {
    let k = rows[0].len();
    let n = rows.len() as f64;
    let mean = rows.iter().fold(DVector::zeros(k), |acc, r| acc + r) / n;
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for r in rows {
        let dev = r - &mean;
        cov += &dev * dev.transpose();
    }
    SpdMatrix::symmetrized(cov / (n - 1.0))
}

/// Generates `c` datasets for `design`, fits the regression of Y on X
/// before and after deletion, and compares the two empirical covariance
/// matrices of the estimates.
///
/// Replications with fewer than 3 complete pairs are redrawn and counted;
/// more than 10% redraws fails the design.
pub fn empirical_gamma(design: &Design, c: usize, seed: SeedStream) -> Result<EmpiricalGamma> {
    design.validate()?;
    if c < 3 {
        return Err(Error::Config(format!("need at least 3 replications, got {c}")));
    }
    let root = seed.child_label("gamma").child_label(&design.key());
    let pairs = (0..c)
        .into_par_iter()
        .map(|r| one_replicate(design, root.child(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let degenerate: usize = pairs.iter().map(|p| p.skipped).sum();
    if degenerate * 10 > c {
        return Err(Error::Degenerate(format!("{degenerate} of {c} replications were degenerate")));
    }
    let comp: Vec<_> = pairs.iter().map(|p| p.comp.clone()).collect();
    let obs: Vec<_> = pairs.iter().map(|p| p.obs.clone()).collect();
    let v_comp = covariance(&comp);
    let v_obs = covariance(&obs);
    let k = v_comp.dim();
    let gamma_mis_emp = DMatrix::identity(k, k) - inverse(v_obs.as_matrix())? * v_comp.as_matrix();
    let eigenvalues = pair_eigen(&v_obs, &SpdMatrix::symmetrized(v_obs.as_matrix() - v_comp.as_matrix()))?.values;
    Ok(EmpiricalGamma { design: *design, replications: c, degenerate, v_comp, v_obs, gamma_mis_emp, eigenvalues })
}
