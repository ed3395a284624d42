//! Replications of the impute-analyse-pool pipeline and their per-cell
//! aggregates.

use rayon::prelude::*;

use super::config::{Design, Method, StudyCell};
use super::{draw_replicate, MAX_ATTEMPTS};
use crate::combine::{mi_summaries, variance_report, VarianceMethod};
use crate::error::{Error, Result};
use crate::estimation::fit_regression_ml;
use crate::imputation::{impute, ImputationMethod};
use crate::rng::SeedStream;

pub const PARAMETERS: [&str; 2] = ["alpha", "beta"];

/// Accuracy of one parameter's point and standard-error estimates within a
/// cell. Relative quantities are fractions, not percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMetrics {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    /// `mean(θ̂ − θ)/θ`.
    pub rel_bias: f64,
    /// `sd(θ̂)/θ`.
    pub rel_se: f64,
    /// `sd(θ̂)`: the target of the standard-error estimates.
    pub sd_emp: f64,
    pub mean_se: f64,
    /// `(mean(SE) − sd(θ̂))/sd(θ̂)`.
    pub se_bias: f64,
    /// `rms(SE − sd(θ̂))/sd(θ̂)`.
    pub se_rmse: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: StudyCell,
    pub replications: usize,
    /// Redrawn replications.
    pub degenerate: usize,
    pub params: Vec<ParamMetrics>,
    /// Mean eigenvalues of the estimated missing-information fraction,
    /// before and after shrinkage (equal for PD).
    pub mean_gamma_raw: Vec<f64>,
    pub mean_gamma_shrunk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: StudyCell,
    pub reason: String,
}

#[derive(Debug, Clone)]
struct Outcome {
    theta: [f64; 2],
    se: [f64; 2],
    covers: [bool; 2],
    gamma_raw: [f64; 2],
    gamma_shrunk: [f64; 2],
    skipped: usize,
}

/// Cells that can share datasets and imputations.
struct Group {
    design: Design,
    d: usize,
    kind: ImputationMethod,
    replications: usize,
    seed: SeedStream,
    /// Indices into the study's cell list, and their variance methods.
    members: Vec<(usize, VarianceMethod)>,
}

fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::Degenerate(_) | Error::NotConverged { .. } | Error::NotPositiveDefinite { .. } | Error::Singular)
}

fn variance_method(m: Method) -> VarianceMethod {
    match m {
        Method::Pd => VarianceMethod::Pd,
        Method::Ml(spec) => VarianceMethod::Ml(spec),
    }
}

/// Root of the data streams for a design; independent of method and `D`.
pub(crate) fn data_root(seed: SeedStream, design: &Design) -> SeedStream {
    seed.child_label("data").child_label(&design.key())
}

fn replicate(group: &Group, r: usize) -> Result<Vec<Outcome>> {
    let root = data_root(group.seed, &group.design).child(r as u64);
    let truth = group.design.truth();
    let mut done: Vec<Option<Outcome>> = vec![None; group.members.len()];
    for attempt in 0..MAX_ATTEMPTS {
        let stream = root.child(attempt as u64);
        let (_, data) = draw_replicate(&group.design, stream)?;
        if data.complete_rows() < 3 {
            continue;
        }
        let set = match impute(&data, group.kind, group.d, stream.child_label(group.kind.label())) {
            Ok(set) => set,
            Err(e) if is_degenerate(&e) => continue,
            Err(e) => return Err(e),
        };
        let estimates = match set.datasets.iter().map(|s| fit_regression_ml(s, 1, &[0])).collect::<Result<Vec<_>>>() {
            Ok(est) => est,
            Err(e) if is_degenerate(&e) => continue,
            Err(e) => return Err(e),
        };
        let summary = mi_summaries(&estimates)?;
        for (slot, (_, method)) in done.iter_mut().zip(&group.members) {
            if slot.is_some() {
                continue;
            }
            let report = match variance_report(&summary, method) {
                Ok(r) => r,
                Err(e) if is_degenerate(&e) => continue,
                Err(e) => return Err(e),
            };
            let mut out = Outcome {
                theta: [report.theta[0], report.theta[1]],
                se: [report.se[0], report.se[1]],
                covers: [false; 2],
                gamma_raw: [0.0; 2],
                gamma_shrunk: [0.0; 2],
                skipped: attempt,
            };
            for j in 0..2 {
                let (lo, hi) = report.intervals[j];
                out.covers[j] = lo <= truth[j] && truth[j] <= hi;
                out.gamma_raw[j] = report.gamma.eigen.values[j];
                out.gamma_shrunk[j] = report.gamma.shrunk_values[j];
            }
            *slot = Some(out);
        }
        if done.iter().all(Option::is_some) {
            return Ok(done.into_iter().map(|o| o.expect("filled")).collect());
        }
    }
    Err(Error::Degenerate(format!("{MAX_ATTEMPTS} consecutive degenerate draws")))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn aggregate(cell: &StudyCell, outcomes: &[&Outcome]) -> CellReport {
    let c = outcomes.len() as f64;
    let truth = cell.design.truth();
    let params = (0..2)
        .map(|j| {
            let est = mean(outcomes.iter().map(|o| o.theta[j]));
            let sd = (outcomes.iter().map(|o| (o.theta[j] - est).powi(2)).sum::<f64>() / (c - 1.0)).sqrt();
            let mean_se = mean(outcomes.iter().map(|o| o.se[j]));
            let mse = mean(outcomes.iter().map(|o| (o.se[j] - sd).powi(2)));
            ParamMetrics {
                name: PARAMETERS[j].to_string(),
                truth: truth[j],
                mean_estimate: est,
                rel_bias: (est - truth[j]) / truth[j],
                rel_se: sd / truth[j],
                sd_emp: sd,
                mean_se,
                se_bias: (mean_se - sd) / sd,
                se_rmse: mse.sqrt() / sd,
                coverage: outcomes.iter().filter(|o| o.covers[j]).count() as f64 / c,
            }
        })
        .collect();
    CellReport {
        cell: cell.clone(),
        replications: outcomes.len(),
        degenerate: outcomes.iter().map(|o| o.skipped).sum(),
        params,
        mean_gamma_raw: (0..2).map(|j| mean(outcomes.iter().map(|o| o.gamma_raw[j]))).collect(),
        mean_gamma_shrunk: (0..2).map(|j| mean(outcomes.iter().map(|o| o.gamma_shrunk[j]))).collect(),
    }
}

fn group_cells(cells: &[StudyCell], master: u64) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let seed = SeedStream::new(cell.seed.unwrap_or(master));
        let kind = cell.method.imputation();
        let found = groups.iter_mut().find(|g| {
            g.design == cell.design
                && g.d == cell.d
                && g.kind == kind
                && g.replications == cell.replications
                && g.seed == seed
        });
        let member = (i, variance_method(cell.method));
        match found {
            Some(g) => g.members.push(member),
            None => groups.push(Group {
                design: cell.design,
                d: cell.d,
                kind,
                replications: cell.replications,
                seed,
                members: vec![member],
            }),
        }
    }
    groups
}

/// Runs every cell; cells sharing design, `D`, imputation method and seed
/// reuse the same imputations. Output order follows `cells`.
///
/// Replications run on the current rayon pool; the reduction is sequential
/// so results do not depend on the number of workers.
pub fn run_cells(cells: &[StudyCell], master: u64) -> Vec<std::result::Result<CellReport, CellFailure>> {
    let groups = group_cells(cells, master);
    let tasks: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| (0..group.replications).map(move |r| (g, r)))
        .collect();
    let results: Vec<Result<Vec<Outcome>>> = tasks.par_iter().map(|&(g, r)| replicate(&groups[g], r)).collect();

    let mut out: Vec<Option<std::result::Result<CellReport, CellFailure>>> = vec![None; cells.len()];
    let mut offset = 0;
    for group in &groups {
        let slice = &results[offset..offset + group.replications];
        offset += group.replications;
        let failure = slice.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string());
        for (m, &(cell_idx, _)) in group.members.iter().enumerate() {
            let cell = &cells[cell_idx];
            out[cell_idx] = Some(match &failure {
                Some(reason) => Err(CellFailure { cell: cell.clone(), reason: reason.clone() }),
                None => {
                    let outcomes: Vec<&Outcome> = slice.iter().map(|r| &r.as_ref().expect("checked")[m]).collect();
                    let report = aggregate(cell, &outcomes);
                    if report.degenerate * 10 > report.replications {
                        Err(CellFailure {
                            cell: cell.clone(),
                            reason: format!(
                                "{} degenerate draws exceed 10% of {} replications",
                                report.degenerate, report.replications
                            ),
                        })
                    } else {
                        Ok(report)
                    }
                }
            });
        }
    }
    out.into_iter().map(|o| o.expect("every cell belongs to a group")).collect()
}

/// One cell on its own; equivalent to a single-cell study.
pub fn run_cell(cell: &StudyCell, master: u64) -> Result<CellReport> {
    cell.validate()?;
    run_cells(std::slice::from_ref(cell), master)
        .pop()
        .expect("one cell in, one out")
        .map_err(|f| Error::Degenerate(f.reason))
}
