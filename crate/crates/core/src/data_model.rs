//! Incomplete datasets, the bivariate-normal generator, and MCAR/MAR deletion.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{domain, Error, Result};
use crate::numerics::{cholesky, std_normal_cdf, SpdMatrix};
use crate::rng::{open_unit, standard_normal, SeedStream};

/// `N × K` table of reals with an observation mask.
///
/// Values stored at unobserved cells are kept (amputation only edits the
/// mask) but are never read by the estimation code.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteDataset {
    names: Vec<String>,
    n: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl IncompleteDataset {
    /// Builds a dataset from row-major values and mask.
    pub fn new(names: Vec<String>, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(domain("dataset needs at least one column"));
        }
        if values.len() % k != 0 || values.is_empty() {
            return Err(Error::DimensionMismatch { expected: k, found: values.len() });
        }
        if observed.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: values.len(), found: observed.len() });
        }
        Ok(IncompleteDataset { n: values.len() / k, names, values, observed })
    }

    pub fn fully_observed(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let observed = vec![true; values.len()];
        Self::new(names, values, observed)
    }

    /// Rows of `Option`s; `None` marks a missing cell.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let k = names.len();
        let mut values = Vec::with_capacity(rows.len() * k);
        let mut observed = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: row.len() });
            }
            for cell in row {
                values.push(cell.unwrap_or(0.0));
                observed.push(cell.is_some());
            }
        }
        Self::new(names, values, observed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.k() + col]
    }

    /// Observed value or `None`.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let idx = row * self.k() + col;
        self.observed[idx].then(|| self.values[idx])
    }

    /// Stored value regardless of the mask. Only for code that has already
    /// checked [`is_observed`](Self::is_observed).
    pub(crate) fn raw(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.k() + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        let idx = row * self.k() + col;
        self.values[idx] = value;
        self.observed[idx] = true;
    }

    fn mark_missing(&mut self, row: usize, col: usize) {
        let k = self.k();
        self.observed[row * k + col] = false;
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn row_complete(&self, row: usize) -> bool {
        let k = self.k();
        self.observed[row * k..(row + 1) * k].iter().all(|&o| o)
    }

    pub fn complete_rows(&self) -> usize {
        (0..self.n).filter(|&i| self.row_complete(i)).count()
    }

    pub fn column_fully_observed(&self, col: usize) -> bool {
        (0..self.n).all(|i| self.is_observed(i, col))
    }

    /// Observed values of one column.
    pub fn observed_column(&self, col: usize) -> Vec<f64> {
        (0..self.n).filter_map(|i| self.get(i, col)).collect()
    }
}

/// Settings for [`generate_bivariate_normal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
}

/// `N` draws of `(X, Y)` from the normal model with means `(1, 1)`, unit
/// variances and correlation `rho`. The regression of Y on X then has slope
/// `rho` and intercept `1 − rho`.
pub fn generate_bivariate_normal(cfg: &GenConfig) -> Result<IncompleteDataset> {
    if !(cfg.rho.abs() < 1.0) {
        return Err(domain(format!("correlation must lie in (-1, 1), got {}", cfg.rho)));
    }
    if cfg.n == 0 {
        return Err(domain("sample size must be positive"));
    }
    let sigma = SpdMatrix::from_row_slice(2, &[1.0, cfg.rho, cfg.rho, 1.0])?;
    let l = cholesky(&sigma)?;
    let mut rng = SeedStream::new(cfg.seed).rng();
    Ok(draw_mvn_rows(&[1.0, 1.0], &l, cfg.n, &mut rng, vec!["x".into(), "y".into()]))
}

fn draw_mvn_rows<R: RngCore>(
    mean: &[f64],
    chol: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
    names: Vec<String>,
) -> IncompleteDataset {
    let k = mean.len();
    let mut values = Vec::with_capacity(n * k);
    let mut z = vec![0.0; k];
    for _ in 0..n {
        for zj in z.iter_mut() {
            *zj = standard_normal(rng);
        }
        for i in 0..k {
            let mut v = mean[i];
            for j in 0..=i {
                v += chol[(i, j)] * z[j];
            }
            values.push(v);
        }
    }
    IncompleteDataset { observed: vec![true; values.len()], n, names, values }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(domain(format!("deletion probability must lie in [0, 1], got {p}")))
    }
}

/// Deletes each value of the last column independently with probability `p`.
pub fn delete_mcar(data: &IncompleteDataset, p: f64, seed: u64) -> Result<IncompleteDataset> {
    check_probability(p)?;
    let mut rng = SeedStream::new(seed).rng();
    let y = data.k() - 1;
    let mut out = data.clone();
    for i in 0..data.n() {
        // One uniform per case keeps the stream aligned whatever p is.
        if open_unit(&mut rng) < p {
            out.mark_missing(i, y);
        }
    }
    Ok(out)
}

/// Deletes the last-column value of case `i` with probability
/// `min(1, p·2·Φ(x_i − x_center))`, where `x` is the first column.
///
/// With a standard-normal driver and `x_center = 0` the average deletion
/// rate is `p` for `p ≤ 1/2`; for the generator's `X ~ N(1, 1)` pass
/// `x_center = 1`.
pub fn delete_mar(
    data: &IncompleteDataset,
    p: f64,
    x_center: f64,
    seed: u64,
) -> Result<IncompleteDataset> {
    check_probability(p)?;
    if data.k() < 2 {
        return Err(domain("MAR deletion needs a driver column and a target column"));
    }
    let mut rng = SeedStream::new(seed).rng();
    let y = data.k() - 1;
    let mut out = data.clone();
    for i in 0..data.n() {
        let x = data
            .get(i, 0)
            .ok_or_else(|| domain(format!("MAR driver is missing in row {i}")))?;
        let prob = (2.0 * p * std_normal_cdf(x - x_center)).min(1.0);
        if open_unit(&mut rng) < prob {
            out.mark_missing(i, y);
        }
    }
    Ok(out)
}

/// Per-column missing fractions and whether missingness is confined to the
/// last column.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingStats {
    pub fraction_missing: Vec<f64>,
    pub monotone: bool,
}

pub fn missing_stats(data: &IncompleteDataset) -> MissingStats {
    let k = data.k();
    let n = data.n() as f64;
    let fraction_missing: Vec<f64> = (0..k)
        .map(|j| (0..data.n()).filter(|&i| !data.is_observed(i, j)).count() as f64 / n)
        .collect();
    let monotone = fraction_missing[..k - 1].iter().all(|&f| f == 0.0);
    MissingStats { fraction_missing, monotone }
}

/// Reads a CSV with a header row; empty fields are missing cells.
pub fn read_csv<R: Read>(reader: R) -> Result<IncompleteDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(names.len());
        for field in record.iter() {
            let field = field.trim();
            if field.is_empty() {
                row.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    domain(format!("row {}: cannot parse {field:?} as a number", line + 1))
                })?;
                row.push(Some(v));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(domain("CSV has no data rows"));
    }
    IncompleteDataset::from_rows(names, &rows)
}

/// Writes a CSV with a header row; missing cells become empty fields.
pub fn write_csv<W: Write>(data: &IncompleteDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(data.names())?;
    for i in 0..data.n() {
        let row: Vec<String> = (0..data.k())
            .map(|j| data.get(i, j).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, rho: f64, seed: u64) -> IncompleteDataset {
        generate_bivariate_normal(&GenConfig { n, rho, seed }).unwrap()
    }

    fn moments(d: &IncompleteDataset) -> (f64, f64, f64, f64, f64) {
        let n = d.n() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..d.n() {
            sx += d.raw(i, 0);
            sy += d.raw(i, 1);
        }
        let (mx, my) = (sx / n, sy / n);
        let (mut vxx, mut vyy, mut vxy) = (0.0, 0.0, 0.0);
        for i in 0..d.n() {
            let (dx, dy) = (d.raw(i, 0) - mx, d.raw(i, 1) - my);
            vxx += dx * dx;
            vyy += dy * dy;
            vxy += dx * dy;
        }
        (mx, my, vxx / n, vyy / n, vxy / n)
    }

    #[test]
    fn independent_when_rho_zero() {
        let d = sample(1_000_000, 0.0, 11);
        let (_, _, vxx, vyy, vxy) = moments(&d);
        assert!((vxy / (vxx * vyy).sqrt()).abs() < 0.005);
    }

    #[test]
    fn regression_coefficients_follow_rho() {
        let d = sample(1_000_000, 0.67, 12);
        let (mx, my, vxx, _, vxy) = moments(&d);
        let beta = vxy / vxx;
        let alpha = my - beta * mx;
        assert!((beta - 0.67).abs() < 0.01, "beta {beta}");
        assert!((alpha - 0.33).abs() < 0.01, "alpha {alpha}");
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(sample(500, 0.33, 5), sample(500, 0.33, 5));
        assert_ne!(sample(500, 0.33, 5), sample(500, 0.33, 6));
    }

    #[test]
    fn rejects_bad_rho() {
        assert!(generate_bivariate_normal(&GenConfig { n: 5, rho: 1.0, seed: 0 }).is_err());
    }

    #[test]
    fn mcar_extremes_and_rate() {
        let d = sample(100_000, 0.33, 1);
        assert_eq!(delete_mcar(&d, 0.0, 3).unwrap(), d);
        let all = delete_mcar(&d, 1.0, 3).unwrap();
        assert_eq!(missing_stats(&all).fraction_missing, vec![0.0, 1.0]);
        let some = delete_mcar(&d, 0.33, 3).unwrap();
        let frac = missing_stats(&some).fraction_missing[1];
        assert!((frac - 0.33).abs() < 0.01);
        assert!(delete_mcar(&d, 1.2, 3).is_err());
    }

    fn standard_normal_driver(n: usize, seed: u64) -> IncompleteDataset {
        let mut rng = SeedStream::new(seed).rng();
        let values: Vec<f64> = (0..n)
            .flat_map(|_| {
                let x = standard_normal(&mut rng);
                [x, 0.0]
            })
            .collect();
        IncompleteDataset::fully_observed(vec!["x".into(), "y".into()], values).unwrap()
    }

    #[test]
    fn mar_rates() {
        let d = standard_normal_driver(100_000, 21);
        assert_eq!(delete_mar(&d, 0.0, 0.0, 2).unwrap(), d);
        let low = delete_mar(&d, 0.33, 0.0, 2).unwrap();
        let frac = missing_stats(&low).fraction_missing[1];
        assert!((frac - 0.33).abs() < 0.01, "{frac}");
        let high = delete_mar(&d, 0.67, 0.0, 2).unwrap();
        let frac = missing_stats(&high).fraction_missing[1];
        assert!(frac < 0.67 && frac > 0.60, "{frac}");
    }

    #[test]
    fn mar_targets_large_x() {
        let d = standard_normal_driver(100_000, 22);
        let out = delete_mar(&d, 0.33, 0.0, 4).unwrap();
        let mut xs: Vec<(f64, bool)> = (0..d.n()).map(|i| (d.raw(i, 0), out.is_observed(i, 1))).collect();
        xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let q = xs.len() / 4;
        let rate = |s: &[(f64, bool)]| s.iter().filter(|c| !c.1).count() as f64 / s.len() as f64;
        assert!(rate(&xs[xs.len() - q..]) > rate(&xs[..q]));
    }

    #[test]
    fn amputation_keeps_stored_values() {
        let d = sample(200, 0.5, 3);
        let out = delete_mar(&d, 0.5, 1.0, 9).unwrap();
        assert_eq!(out.values, d.values);
    }

    #[test]
    fn stats_examples() {
        let d = sample(10, 0.5, 3);
        assert_eq!(missing_stats(&d), MissingStats { fraction_missing: vec![0.0, 0.0], monotone: true });
        let mut one = d.clone();
        one.mark_missing(4, 1);
        let s = missing_stats(&one);
        assert_eq!(s.fraction_missing, vec![0.0, 0.1]);
        assert!(s.monotone);
        let mut x_missing = d.clone();
        x_missing.mark_missing(0, 0);
        assert!(!missing_stats(&x_missing).monotone);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            vec![Some(0.5), Some(1.25)],
            vec![Some(-2.0), None],
            vec![Some(3.0), Some(0.1)],
        ];
        let d = IncompleteDataset::from_rows(vec!["x".into(), "y".into()], &rows).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "x,y\n0.5,1.25\n-2,\n3,0.1\n");
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.names(), d.names());
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(back.get(i, j), d.get(i, j));
            }
        }
    }
}
