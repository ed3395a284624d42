//! Parameter estimation from complete and incomplete multivariate-normal data.
//!
//! * [`fit_regression_ml`]: least-squares regression with the ML residual
//!   divisor, reporting `σ̂²·(XᵀX)⁻¹` as the inverse information.
//! * [`fit_mvn_monotone_ml`]: closed-form observed-data ML when only the last
//!   column has missing values (marginal of the complete block times the
//!   regression of the last column on it).
//! * [`fit_mvn_em`]: EM for arbitrary missingness patterns.
//! * [`posterior_draw_mvn`]: exact draws from the Jeffreys-prior posterior
//!   for the bivariate monotone pattern.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::data_model::{missing_stats, IncompleteDataset};
use crate::error::{domain, Error, Result};
use crate::numerics::{cholesky, spd_inverse, SpdMatrix};
use crate::rng::standard_normal;

/// Point estimate with its estimated covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub theta: DVector<f64>,
    pub w: SpdMatrix,
    pub labels: Vec<String>,
}

impl ParamEstimate {
    pub fn new(theta: DVector<f64>, w: SpdMatrix, labels: Vec<String>) -> Result<Self> {
        if w.dim() != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), found: w.dim() });
        }
        if labels.len() != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), found: labels.len() });
        }
        Ok(ParamEstimate { theta, w, labels })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Mean vector and covariance matrix of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnParams {
    pub mu: DVector<f64>,
    pub sigma: SpdMatrix,
}

/// Regression of the last variable on all the others implied by an MVN.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRegression {
    pub intercept: f64,
    pub slopes: DVector<f64>,
    pub residual_variance: f64,
}

impl MvnParams {
    pub fn new(mu: DVector<f64>, sigma: SpdMatrix) -> Result<Self> {
        if sigma.dim() != mu.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), found: sigma.dim() });
        }
        Ok(MvnParams { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `E[Y | X] = intercept + slopesᵀX`, `Var[Y | X] = residual_variance`,
    /// with Y the last variable.
    pub fn conditional_regression(&self) -> Result<ConditionalRegression> {
        let k = self.dim();
        let s = self.sigma.as_matrix();
        let p = k - 1;
        let sxx = SpdMatrix::symmetrized(s.view((0, 0), (p, p)).into_owned());
        let sxy: DVector<f64> = s.view((0, p), (p, 1)).column(0).into_owned();
        let slopes = if p == 0 {
            DVector::zeros(0)
        } else {
            spd_inverse(&sxx)
                .map_err(|_| Error::Degenerate("predictor covariance is singular".into()))?
                .as_matrix()
                * &sxy
        };
        let mu_x = self.mu.rows(0, p);
        let intercept = self.mu[p] - slopes.dot(&mu_x);
        let residual_variance = s[(p, p)] - slopes.dot(&sxy);
        Ok(ConditionalRegression { intercept, slopes, residual_variance })
    }
}

struct LeastSquares {
    coef: DVector<f64>,
    xtx_inv: SpdMatrix,
    sse: f64,
    n: usize,
}

fn least_squares(
    data: &IncompleteDataset,
    rows: &[usize],
    y_col: usize,
    x_cols: &[usize],
) -> Result<LeastSquares> {
    let p = x_cols.len() + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row_buf = vec![0.0; p];
    row_buf[0] = 1.0;
    for &i in rows {
        for (slot, &c) in row_buf[1..].iter_mut().zip(x_cols) {
            *slot = data.raw(i, c);
        }
        let y = data.raw(i, y_col);
        for a in 0..p {
            xty[a] += row_buf[a] * y;
            for b in 0..=a {
                xtx[(a, b)] += row_buf[a] * row_buf[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let xtx = SpdMatrix::symmetrized(xtx);
    let xtx_inv = spd_inverse(&xtx)
        .map_err(|_| Error::Degenerate("design matrix XᵀX is singular".into()))?;
    let coef = xtx_inv.as_matrix() * xty;
    let mut sse = 0.0;
    for &i in rows {
        let mut fit = coef[0];
        for (j, &c) in x_cols.iter().enumerate() {
            fit += coef[j + 1] * data.raw(i, c);
        }
        let r = data.raw(i, y_col) - fit;
        sse += r * r;
    }
    Ok(LeastSquares { coef, xtx_inv, sse, n: rows.len() })
}

fn check_columns(data: &IncompleteDataset, y_col: usize, x_cols: &[usize]) -> Result<()> {
    let k = data.k();
    if y_col >= k || x_cols.iter().any(|&c| c >= k) {
        return Err(domain("column index out of range"));
    }
    Ok(())
}

fn regression_labels(data: &IncompleteDataset, x_cols: &[usize]) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain(x_cols.iter().map(|&c| data.names()[c].clone()))
        .collect()
}

fn regression_estimate(data: &IncompleteDataset, ls: LeastSquares, x_cols: &[usize]) -> Result<ParamEstimate> {
    let sigma2 = ls.sse / ls.n as f64;
    let w = SpdMatrix::symmetrized(ls.xtx_inv.into_inner() * sigma2);
    ParamEstimate::new(ls.coef, w, regression_labels(data, x_cols))
}

/// Complete-data ML regression of `y_col` on `x_cols` (with intercept).
///
/// The residual variance uses divisor `N`, and `w = σ̂²·(XᵀX)⁻¹`.
pub fn fit_regression_ml(data: &IncompleteDataset, y_col: usize, x_cols: &[usize]) -> Result<ParamEstimate> {
    check_columns(data, y_col, x_cols)?;
    for i in 0..data.n() {
        if !data.is_observed(i, y_col) || x_cols.iter().any(|&c| !data.is_observed(i, c)) {
            return Err(domain(format!("row {i} has a missing cell in the regression columns")));
        }
    }
    if data.n() <= x_cols.len() + 1 {
        return Err(Error::Degenerate(format!(
            "{} cases cannot identify {} coefficients",
            data.n(),
            x_cols.len() + 1
        )));
    }
    let rows: Vec<usize> = (0..data.n()).collect();
    let ls = least_squares(data, &rows, y_col, x_cols)?;
    regression_estimate(data, ls, x_cols)
}

/// Same regression restricted to the cases where every used column is
/// observed. With complete predictors and MAR outcome this is the
/// observed-data ML estimate of the regression coefficients.
pub fn fit_regression_complete_cases(
    data: &IncompleteDataset,
    y_col: usize,
    x_cols: &[usize],
) -> Result<ParamEstimate> {
    check_columns(data, y_col, x_cols)?;
    let rows: Vec<usize> = (0..data.n())
        .filter(|&i| data.is_observed(i, y_col) && x_cols.iter().all(|&c| data.is_observed(i, c)))
        .collect();
    if rows.len() <= x_cols.len() + 1 {
        return Err(Error::Degenerate(format!("only {} complete cases", rows.len())));
    }
    let ls = least_squares(data, &rows, y_col, x_cols)?;
    regression_estimate(data, ls, x_cols)
}

/// Closed-form observed-data ML for missingness confined to the last column.
pub fn fit_mvn_monotone_ml(data: &IncompleteDataset) -> Result<MvnParams> {
    if !missing_stats(data).monotone {
        return Err(domain("closed-form ML needs missingness confined to the last column"));
    }
    let k = data.k();
    let p = k - 1;
    let n = data.n() as f64;
    let y = p;
    let x_cols: Vec<usize> = (0..p).collect();

    let mut mu_x = DVector::<f64>::zeros(p);
    for i in 0..data.n() {
        for j in 0..p {
            mu_x[j] += data.raw(i, j);
        }
    }
    mu_x /= n;
    let mut sxx = DMatrix::<f64>::zeros(p, p);
    for i in 0..data.n() {
        for a in 0..p {
            for b in 0..=a {
                sxx[(a, b)] += (data.raw(i, a) - mu_x[a]) * (data.raw(i, b) - mu_x[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            sxx[(b, a)] = sxx[(a, b)];
        }
    }
    sxx /= n;

    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.is_observed(i, y)).collect();
    if rows.len() < p + 1 {
        return Err(Error::Degenerate(format!("only {} complete cases", rows.len())));
    }
    let ls = least_squares(data, &rows, y, &x_cols)?;
    let alpha = ls.coef[0];
    let beta: DVector<f64> = ls.coef.rows(1, p).into_owned();
    let resid = ls.sse / ls.n as f64;

    let sxy = &sxx * &beta;
    let mut mu = DVector::<f64>::zeros(k);
    mu.rows_mut(0, p).copy_from(&mu_x);
    mu[p] = alpha + beta.dot(&mu_x);
    let mut sigma = DMatrix::<f64>::zeros(k, k);
    sigma.view_mut((0, 0), (p, p)).copy_from(&sxx);
    for j in 0..p {
        sigma[(j, p)] = sxy[j];
        sigma[(p, j)] = sxy[j];
    }
    sigma[(p, p)] = beta.dot(&sxy) + resid;
    MvnParams::new(mu, SpdMatrix::symmetrized(sigma))
}

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Largest absolute change in any entry of `(μ, Σ)` that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-8, max_iter: 1000 }
    }
}

/// EM result with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: MvnParams,
    pub iterations: usize,
    /// Observed-data log-likelihood at the start of every iteration, plus
    /// the value at the returned estimate.
    pub log_likelihoods: Vec<f64>,
}

struct Pattern {
    observed: Vec<usize>,
    missing: Vec<usize>,
    rows: Vec<usize>,
}

fn patterns(data: &IncompleteDataset) -> Vec<Pattern> {
    let k = data.k();
    let mut out: Vec<Pattern> = Vec::new();
    for i in 0..data.n() {
        let observed: Vec<usize> = (0..k).filter(|&j| data.is_observed(i, j)).collect();
        match out.iter_mut().find(|p| p.observed == observed) {
            Some(p) => p.rows.push(i),
            None => {
                let missing = (0..k).filter(|j| !observed.contains(j)).collect();
                out.push(Pattern { observed, missing, rows: vec![i] });
            }
        }
    }
    out
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed-data log-likelihood of `params` under the normal model.
pub fn observed_log_likelihood(data: &IncompleteDataset, params: &MvnParams) -> Result<f64> {
    if params.dim() != data.k() {
        return Err(Error::DimensionMismatch { expected: data.k(), found: params.dim() });
    }
    let mut total = 0.0;
    for pat in patterns(data) {
        if pat.observed.is_empty() {
            continue;
        }
        let soo = SpdMatrix::symmetrized(submatrix(params.sigma.as_matrix(), &pat.observed, &pat.observed));
        let l = cholesky(&soo)?;
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let m = pat.observed.len();
        for &i in &pat.rows {
            let r = DVector::from_iterator(m, pat.observed.iter().map(|&j| data.raw(i, j) - params.mu[j]));
            let z = l.solve_lower_triangular(&r).ok_or(Error::Singular)?;
            total += -0.5 * (m as f64 * LN_2PI + log_det + z.norm_squared());
        }
    }
    Ok(total)
}

fn initial_params(data: &IncompleteDataset) -> MvnParams {
    let k = data.k();
    let complete: Vec<usize> = (0..data.n()).filter(|&i| data.row_complete(i)).collect();
    if complete.len() > k {
        let nc = complete.len() as f64;
        let mut mu = DVector::<f64>::zeros(k);
        for &i in &complete {
            for j in 0..k {
                mu[j] += data.raw(i, j);
            }
        }
        mu /= nc;
        let mut s = DMatrix::<f64>::zeros(k, k);
        for &i in &complete {
            for a in 0..k {
                for b in 0..k {
                    s[(a, b)] += (data.raw(i, a) - mu[a]) * (data.raw(i, b) - mu[b]);
                }
            }
        }
        let sigma = SpdMatrix::symmetrized(s / nc);
        if sigma.is_positive_definite() {
            return MvnParams { mu, sigma };
        }
    }
    // Fallback: observed column means, identity scaled by the mean observed variance.
    let mut mu = DVector::<f64>::zeros(k);
    let mut var_sum = 0.0;
    for j in 0..k {
        let col = data.observed_column(j);
        let m = if col.is_empty() { 0.0 } else { col.iter().sum::<f64>() / col.len() as f64 };
        mu[j] = m;
        if col.len() > 1 {
            var_sum += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
        } else {
            var_sum += 1.0;
        }
    }
    let scale = (var_sum / k as f64).max(1e-8);
    MvnParams { mu, sigma: SpdMatrix::symmetrized(DMatrix::identity(k, k) * scale) }
}

/// Observed-data ML of `(μ, Σ)` by EM.
///
/// The E-step replaces missing blocks by their conditional means and adds
/// the conditional covariance to the second-moment statistic; the M-step
/// uses ML divisors.
pub fn fit_mvn_em(data: &IncompleteDataset, opts: &EmOptions) -> Result<EmFit> {
    let k = data.k();
    let n = data.n() as f64;
    let pats = patterns(data);
    let mut params = initial_params(data);
    let mut log_likelihoods = Vec::new();
    let mut last_delta = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        log_likelihoods.push(observed_log_likelihood(data, &params)?);

        let mut t1 = DVector::<f64>::zeros(k);
        let mut t2 = DMatrix::<f64>::zeros(k, k);
        let sigma = params.sigma.as_matrix();
        for pat in &pats {
            let mut cond_cov = DMatrix::<f64>::zeros(k, k);
            let mut coef: Option<DMatrix<f64>> = None;
            if !pat.missing.is_empty() {
                let smm = submatrix(sigma, &pat.missing, &pat.missing);
                let cmm = if pat.observed.is_empty() {
                    smm
                } else {
                    let soo = SpdMatrix::symmetrized(submatrix(sigma, &pat.observed, &pat.observed));
                    let soo_inv = spd_inverse(&soo)
                        .map_err(|_| Error::Degenerate("EM covariance lost positive definiteness".into()))?;
                    let smo = submatrix(sigma, &pat.missing, &pat.observed);
                    let b = &smo * soo_inv.as_matrix();
                    let cmm = smm - &b * smo.transpose();
                    coef = Some(b);
                    cmm
                };
                for (a, &ja) in pat.missing.iter().enumerate() {
                    for (b, &jb) in pat.missing.iter().enumerate() {
                        cond_cov[(ja, jb)] = cmm[(a, b)];
                    }
                }
            }
            let mut xhat = DVector::<f64>::zeros(k);
            for &i in &pat.rows {
                for &j in &pat.observed {
                    xhat[j] = data.raw(i, j);
                }
                for (a, &j) in pat.missing.iter().enumerate() {
                    let mut v = params.mu[j];
                    if let Some(b) = &coef {
                        for (c, &jo) in pat.observed.iter().enumerate() {
                            v += b[(a, c)] * (data.raw(i, jo) - params.mu[jo]);
                        }
                    }
                    xhat[j] = v;
                }
                t1 += &xhat;
                t2 += &xhat * xhat.transpose();
            }
            t2 += cond_cov * pat.rows.len() as f64;
        }
        let mu = t1 / n;
        let sigma_new = SpdMatrix::symmetrized(t2 / n - &mu * mu.transpose());
        if !sigma_new.is_positive_definite() {
            return Err(Error::Degenerate("EM covariance lost positive definiteness".into()));
        }
        let delta = (&mu - &params.mu)
            .amax()
            .max((sigma_new.as_matrix() - params.sigma.as_matrix()).amax());
        params = MvnParams { mu, sigma: sigma_new };
        last_delta = delta;
        if delta < opts.tol {
            log_likelihoods.push(observed_log_likelihood(data, &params)?);
            return Ok(EmFit { params, iterations: iter, log_likelihoods });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, last_delta })
}

/// One draw of `(μ, Σ)` from the Jeffreys-prior posterior for a bivariate
/// dataset with X complete and Y partly missing.
///
/// Factorized as the X marginal (`σ²_X = N·s²_X/χ²_{N−1}`,
/// `μ_X ~ N(x̄, σ²_X/N)`) and the regression of Y on X over the complete
/// pairs (`σ²_{Y|X} = SSE/χ²_{n_c−2}`, `(α, β) ~ N(LS, σ²_{Y|X}(XᵀX)⁻¹)`).
pub fn posterior_draw_mvn<R: Rng + ?Sized>(data: &IncompleteDataset, rng: &mut R) -> Result<MvnParams> {
    if data.k() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: data.k() });
    }
    if !missing_stats(data).monotone {
        return Err(domain("posterior draws need X complete"));
    }
    let n = data.n();
    let rows: Vec<usize> = (0..n).filter(|&i| data.is_observed(i, 1)).collect();
    if rows.len() < 4 {
        return Err(Error::Degenerate(format!("posterior draws need 4 complete pairs, found {}", rows.len())));
    }
    let ls = least_squares(data, &rows, 1, &[0])?;
    let nc = rows.len();

    let xbar = (0..n).map(|i| data.raw(i, 0)).sum::<f64>() / n as f64;
    let ss_x: f64 = (0..n).map(|i| (data.raw(i, 0) - xbar).powi(2)).sum();

    let chi_res = ChiSquared::new((nc - 2) as f64).map_err(|e| domain(e.to_string()))?;
    let resid = ls.sse / chi_res.sample(rng);
    let l = cholesky(&ls.xtx_inv)?;
    let z = [standard_normal(rng), standard_normal(rng)];
    let sd = resid.sqrt();
    let alpha = ls.coef[0] + sd * l[(0, 0)] * z[0];
    let beta = ls.coef[1] + sd * (l[(1, 0)] * z[0] + l[(1, 1)] * z[1]);

    let chi_x = ChiSquared::new((n - 1) as f64).map_err(|e| domain(e.to_string()))?;
    let var_x = ss_x / chi_x.sample(rng);
    let mu_x = xbar + (var_x / n as f64).sqrt() * standard_normal(rng);

    let mu = DVector::from_vec(vec![mu_x, alpha + beta * mu_x]);
    let cov_xy = beta * var_x;
    let sigma = SpdMatrix::symmetrized(DMatrix::from_row_slice(
        2,
        2,
        &[var_x, cov_xy, cov_xy, beta * beta * var_x + resid],
    ));
    MvnParams::new(mu, sigma)
}
