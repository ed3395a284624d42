//! Monte Carlo study driver: empirical missing-information fractions, and
//! the accuracy of pooled point and standard-error estimates per design
//! cell.

mod cell;
mod config;
mod gamma;
mod report;

pub use cell::{run_cell, run_cells, CellFailure, CellReport, ParamMetrics, PARAMETERS};
pub use config::{default_cells, default_designs, default_methods, parse_config, Design, Method, Pattern, StudyCell};
pub use gamma::{empirical_gamma, EmpiricalGamma};
pub use report::{
    ml_representatives, point_summary, read_cells_csv, run_study, shrinkage_summary, write_cells_csv, write_gamma_csv, write_markdown,
    PointSummary, ShrinkageRow, StudyReport,
};

use crate::data_model::{generate_bivariate_normal, GenConfig, IncompleteDataset};
use crate::error::Result;
use crate::rng::SeedStream;

/// Redraw budget for one replication before the cell gives up.
pub(crate) const MAX_ATTEMPTS: usize = 1000;

/// Complete and amputated dataset for one replication attempt.
pub(crate) fn draw_replicate(design: &Design, stream: SeedStream) -> Result<(IncompleteDataset, IncompleteDataset)> {
    let complete = generate_bivariate_normal(&GenConfig {
        n: design.n,
        rho: design.rho,
        seed: stream.child_label("generate").key(),
    })?;
    let incomplete = design.pattern.amputate(&complete, design.p, stream.child_label("delete").key())?;
    Ok((complete, incomplete))
}

/// Full pipeline on one user dataset: impute `d` times, fit the regression
/// of the last column on the others in each completed dataset, and pool.
pub fn analyze(data: &IncompleteDataset, method: Method, d: usize, seed: u64) -> Result<crate::combine::VarianceReport> {
    use crate::combine::{mi_summaries, variance_report, VarianceMethod};
    use crate::estimation::fit_regression_ml;
    use crate::imputation::impute;

    let k = data.k();
    if k < 2 {
        return Err(crate::error::Error::DimensionMismatch { expected: 2, found: k });
    }
    let predictors: Vec<usize> = (0..k - 1).collect();
    let set = impute(data, method.imputation(), d, SeedStream::new(seed).child_label(method.imputation().label()))?;
    let estimates = set
        .datasets
        .iter()
        .map(|s| fit_regression_ml(s, k - 1, &predictors))
        .collect::<Result<Vec<_>>>()?;
    let summary = mi_summaries(&estimates)?;
    let vm = match method {
        Method::Pd => VarianceMethod::Pd,
        Method::Ml(spec) => VarianceMethod::Ml(spec),
    };
    variance_report(&summary, &vm)
}
