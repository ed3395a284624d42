//! Random imputation given an observed-data parameter estimate, and the two
//! multiple-imputation drivers (ML and posterior-draw).

use std::io::Write;

use nalgebra::DVector;
use rand::RngCore;

use crate::data_model::{missing_stats, IncompleteDataset};
use crate::error::{domain, Error, Result};
use crate::estimation::{fit_mvn_em, fit_mvn_monotone_ml, posterior_draw_mvn, EmOptions, MvnParams};
use crate::numerics::{cholesky, spd_inverse, SpdMatrix};
use crate::rng::{standard_normal, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImputationMethod {
    /// Every imputation conditions on the single observed-data ML estimate.
    Ml,
    /// Every imputation conditions on a fresh posterior draw.
    Pd,
}

impl ImputationMethod {
    pub fn label(self) -> &'static str {
        match self {
            ImputationMethod::Ml => "ml",
            ImputationMethod::Pd => "pd",
        }
    }
}

/// Parameters the imputations were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceTheta {
    Single(MvnParams),
    PerImputation(Vec<MvnParams>),
}

/// `D` completed copies of one incomplete dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSet {
    pub datasets: Vec<IncompleteDataset>,
    pub method: ImputationMethod,
    pub source_theta: SourceTheta,
}

impl ImputedSet {
    pub fn d(&self) -> usize {
        self.datasets.len()
    }

    /// Stacked CSV: an `_imputation_` column (1-based) followed by the data.
    pub fn write_stacked_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let Some(first) = self.datasets.first() else {
            return Ok(());
        };
        let mut header = vec!["_imputation_".to_string()];
        header.extend(first.names().iter().cloned());
        wtr.write_record(&header)?;
        for (d, data) in self.datasets.iter().enumerate() {
            for i in 0..data.n() {
                let mut row = vec![(d + 1).to_string()];
                row.extend((0..data.k()).map(|j| data.get(i, j).map(|v| v.to_string()).unwrap_or_default()));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fills every missing cell with a draw from its conditional normal
/// distribution given the row's observed cells under `params`.
///
/// With only the last column missing this is `α + βᵀx + e`,
/// `e ~ N(0, σ²_{Y|X})`. Observed cells are copied bit-for-bit.
pub fn impute_once<R: RngCore + ?Sized>(
    data: &IncompleteDataset,
    params: &MvnParams,
    rng: &mut R,
) -> Result<IncompleteDataset> {
    let k = data.k();
    if params.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, found: params.dim() });
    }
    let mut out = data.clone();
    let sigma = params.sigma.as_matrix();
    // Cache per missingness pattern: regression coefficients and a square
    // root of the conditional covariance.
    let mut cache: Vec<(Vec<bool>, nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>)> = Vec::new();
    for i in 0..data.n() {
        let mask: Vec<bool> = (0..k).map(|j| data.is_observed(i, j)).collect();
        if mask.iter().all(|&o| o) {
            continue;
        }
        let obs: Vec<usize> = (0..k).filter(|&j| mask[j]).collect();
        let mis: Vec<usize> = (0..k).filter(|&j| !mask[j]).collect();
        let pos = match cache.iter().position(|c| c.0 == mask) {
            Some(pos) => pos,
            None => {
                let smm = nalgebra::DMatrix::from_fn(mis.len(), mis.len(), |a, b| sigma[(mis[a], mis[b])]);
                let (coef, cmm) = if obs.is_empty() {
                    (nalgebra::DMatrix::zeros(mis.len(), 0), smm)
                } else {
                    let soo = SpdMatrix::symmetrized(nalgebra::DMatrix::from_fn(obs.len(), obs.len(), |a, b| {
                        sigma[(obs[a], obs[b])]
                    }));
                    let soo_inv = spd_inverse(&soo)
                        .map_err(|_| Error::Degenerate("observed-block covariance is singular".into()))?;
                    let smo = nalgebra::DMatrix::from_fn(mis.len(), obs.len(), |a, b| sigma[(mis[a], obs[b])]);
                    let coef = &smo * soo_inv.as_matrix();
                    let cmm = smm - &coef * smo.transpose();
                    (coef, cmm)
                };
                cache.push((mask.clone(), coef, conditional_root(cmm)?));
                cache.len() - 1
            }
        };
        let (_, coef, root) = &cache[pos];
        let resid_obs = DVector::from_iterator(obs.len(), obs.iter().map(|&j| data.raw(i, j) - params.mu[j]));
        let z = DVector::from_iterator(mis.len(), (0..mis.len()).map(|_| standard_normal(rng)));
        let draw = coef * resid_obs + root * z;
        for (a, &j) in mis.iter().enumerate() {
            out.set(i, j, params.mu[j] + draw[a]);
        }
    }
    Ok(out)
}

/// Square root of a conditional covariance that may be exactly singular.
fn conditional_root(c: nalgebra::DMatrix<f64>) -> Result<nalgebra::DMatrix<f64>> {
    let scale = c.amax().max(f64::MIN_POSITIVE);
    for j in 0..c.nrows() {
        if c[(j, j)] < -1e-10 * scale.max(1.0) {
            return Err(Error::Degenerate(format!("negative conditional variance {:e}", c[(j, j)])));
        }
    }
    if c.nrows() == 1 {
        return Ok(nalgebra::DMatrix::from_element(1, 1, c[(0, 0)].max(0.0).sqrt()));
    }
    let sym = SpdMatrix::symmetrized(c);
    match cholesky(&sym) {
        Ok(l) => Ok(l),
        Err(_) => {
            // Semidefinite: fall back to the eigen square root.
            let (values, vectors) = crate::numerics::symmetric_eigen(sym.as_matrix());
            let mut root = vectors;
            for (j, v) in values.iter().enumerate() {
                root.column_mut(j).scale_mut(v.max(0.0).sqrt());
            }
            Ok(root)
        }
    }
}

fn check_d(d: usize) -> Result<()> {
    if d < 2 {
        return Err(domain(format!("need at least 2 imputations, got {d}")));
    }
    Ok(())
}

/// Observed-data ML estimate used by [`impute_ml`]: EM, cross-checked
/// against the closed form when only the last column is incomplete.
pub fn observed_ml_estimate(data: &IncompleteDataset, opts: &EmOptions) -> Result<MvnParams> {
    let monotone = missing_stats(data).monotone;
    match fit_mvn_em(data, opts) {
        Ok(fit) => {
            if monotone {
                let closed = fit_mvn_monotone_ml(data)?;
                let tol = 1e-5;
                let mu_gap = (&fit.params.mu - &closed.mu).amax();
                let sigma_gap = (fit.params.sigma.as_matrix() - closed.sigma.as_matrix()).amax();
                let scale = 1.0 + closed.sigma.as_matrix().amax() + closed.mu.amax();
                if mu_gap.max(sigma_gap) > tol * scale {
                    return Err(Error::Degenerate(format!(
                        "EM and closed-form ML disagree by {:e}",
                        mu_gap.max(sigma_gap)
                    )));
                }
            }
            Ok(fit.params)
        }
        // Slow EM on a monotone pattern: the closed form is the exact ML.
        Err(Error::NotConverged { .. }) if monotone => fit_mvn_monotone_ml(data),
        Err(e) => Err(e),
    }
}

/// ML multiple imputation: one observed-data ML fit, then `d` independent
/// imputations from it. Imputation `i` uses child stream `i` of `seed`.
pub fn impute_ml(data: &IncompleteDataset, d: usize, seed: SeedStream) -> Result<ImputedSet> {
    check_d(d)?;
    let params = observed_ml_estimate(data, &EmOptions::default())?;
    let datasets = (0..d)
        .map(|i| impute_once(data, &params, &mut seed.child(i as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImputedSet { datasets, method: ImputationMethod::Ml, source_theta: SourceTheta::Single(params) })
}

/// Posterior-draw multiple imputation: a fresh parameter draw before every
/// imputation, both taken from child stream `i` of `seed`.
pub fn impute_pd(data: &IncompleteDataset, d: usize, seed: SeedStream) -> Result<ImputedSet> {
    check_d(d)?;
    let mut datasets = Vec::with_capacity(d);
    let mut thetas = Vec::with_capacity(d);
    for i in 0..d {
        let mut rng = seed.child(i as u64).rng();
        let params = posterior_draw_mvn(data, &mut rng)?;
        datasets.push(impute_once(data, &params, &mut rng)?);
        thetas.push(params);
    }
    Ok(ImputedSet { datasets, method: ImputationMethod::Pd, source_theta: SourceTheta::PerImputation(thetas) })
}

pub fn impute(data: &IncompleteDataset, method: ImputationMethod, d: usize, seed: SeedStream) -> Result<ImputedSet> {
    match method {
        ImputationMethod::Ml => impute_ml(data, d, seed),
        ImputationMethod::Pd => impute_pd(data, d, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{delete_mcar, generate_bivariate_normal, GenConfig};
    use nalgebra::DMatrix;

    fn incomplete(n: usize, p: f64, seed: u64) -> IncompleteDataset {
        let d = generate_bivariate_normal(&GenConfig { n, rho: 0.5, seed }).unwrap();
        delete_mcar(&d, p, seed + 1).unwrap()
    }

    fn params(mu: [f64; 2], s: [f64; 4]) -> MvnParams {
        MvnParams::new(DVector::from_row_slice(&mu), SpdMatrix::from_row_slice(2, &s).unwrap()).unwrap()
    }

    #[test]
    fn nothing_to_impute() {
        let d = incomplete(20, 0.0, 1);
        let mut rng = SeedStream::new(0).rng();
        let out = impute_once(&d, &params([0.0, 0.0], [1.0, 0.0, 0.0, 1.0]), &mut rng).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn degenerate_conditional_is_deterministic() {
        let d = incomplete(50, 0.5, 2);
        // Perfect correlation: Y = 2X + 1 exactly.
        let p = params([0.0, 1.0], [1.0, 2.0, 2.0, 4.0]);
        let out = impute_once(&d, &p, &mut SeedStream::new(0).rng()).unwrap();
        for i in 0..d.n() {
            if !d.is_observed(i, 1) {
                let x = d.get(i, 0).unwrap();
                assert!((out.get(i, 1).unwrap() - (1.0 + 2.0 * x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_moments_at_fixed_x() {
        let rows: Vec<Vec<Option<f64>>> = (0..100_000).map(|_| vec![Some(0.7), None]).collect();
        let d = IncompleteDataset::from_rows(vec!["x".into(), "y".into()], &rows).unwrap();
        let p = params([1.0, 2.0], [2.0, 0.6, 0.6, 1.5]);
        // β = 0.3, α = 2 − 0.3, σ² = 1.5 − 0.18
        let out = impute_once(&d, &p, &mut SeedStream::new(4).rng()).unwrap();
        let ys = out.observed_column(1);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want_mean = 1.7 + 0.3 * 0.7;
        let want_var = 1.32;
        assert!((mean - want_mean).abs() < 4.0 * (want_var / n).sqrt(), "{mean}");
        assert!((var - want_var).abs() < 4.0 * want_var * (2.0 / n).sqrt(), "{var}");
    }

    #[test]
    fn negative_conditional_variance_is_rejected() {
        let d = incomplete(10, 0.5, 3);
        let bad = MvnParams { mu: DVector::zeros(2), sigma: SpdMatrix::symmetrized(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])) };
        assert!(matches!(impute_once(&d, &bad, &mut SeedStream::new(0).rng()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ml_preserves_observed_and_varies_imputed() {
        let d = incomplete(40, 0.4, 5);
        let set = impute_ml(&d, 2, SeedStream::new(8)).unwrap();
        assert_eq!(set.d(), 2);
        let mut differs = false;
        for i in 0..d.n() {
            for j in 0..d.k() {
                if let Some(v) = d.get(i, j) {
                    for imp in &set.datasets {
                        assert_eq!(imp.get(i, j).unwrap().to_bits(), v.to_bits());
                    }
                } else {
                    differs |= set.datasets[0].get(i, j) != set.datasets[1].get(i, j);
                }
            }
        }
        assert!(differs);
        assert!(set.datasets.iter().all(|s| s.is_complete()));
        assert!(matches!(set.source_theta, SourceTheta::Single(_)));
    }

    #[test]
    fn pd_draws_distinct_parameters() {
        let d = incomplete(40, 0.4, 6);
        let set = impute_pd(&d, 2, SeedStream::new(8)).unwrap();
        match &set.source_theta {
            SourceTheta::PerImputation(t) => assert_ne!(t[0], t[1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prefix_consistency_and_determinism() {
        let d = incomplete(30, 0.3, 7);
        for method in [ImputationMethod::Ml, ImputationMethod::Pd] {
            let five = impute(&d, method, 5, SeedStream::new(42)).unwrap();
            let more = impute(&d, method, 25, SeedStream::new(42)).unwrap();
            assert_eq!(five.datasets[..], more.datasets[..5]);
            assert_eq!(five, impute(&d, method, 5, SeedStream::new(42)).unwrap());
        }
        assert!(impute_ml(&d, 1, SeedStream::new(1)).is_err());
    }

    #[test]
    fn stacked_csv_layout() {
        let rows = vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), None]];
        let d = IncompleteDataset::from_rows(vec!["x".into(), "y".into()], &rows).unwrap();
        let p = params([0.0, 0.0], [1.0, 0.0, 0.0, 1.0]);
        let set = ImputedSet {
            datasets: vec![d.clone(), d],
            method: ImputationMethod::Ml,
            source_theta: SourceTheta::Single(p),
        };
        let mut buf = Vec::new();
        set.write_stacked_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "_imputation_,x,y\n1,1,2\n1,3,\n2,1,2\n2,3,\n");
    }
}
