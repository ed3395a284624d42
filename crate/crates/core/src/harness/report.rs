//! Study-level aggregation and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use super::cell::{run_cells, CellFailure, CellReport, ParamMetrics, PARAMETERS};
use super::config::{Design, Method, StudyCell};
use super::gamma::{empirical_gamma, EmpiricalGamma};
use crate::combine::ShrinkageKind;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Default)]
pub struct StudyReport {
    pub cells: Vec<CellReport>,
    pub failures: Vec<CellFailure>,
    pub gamma: Vec<EmpiricalGamma>,
    pub gamma_failures: Vec<(Design, String)>,
}

fn distinct_designs(cells: &[StudyCell]) -> Vec<Design> {
    let mut out: Vec<Design> = Vec::new();
    for c in cells {
        if !out.contains(&c.design) {
            out.push(c.design);
        }
    }
    out
}

/// Runs the empirical-fraction phase (when `gamma_reps` is given) for every
/// design in `cells`, then every cell. Failures are collected, not fatal.
pub fn run_study(cells: &[StudyCell], master: u64, gamma_reps: Option<usize>) -> StudyReport {
    let mut report = StudyReport::default();
    if let Some(c) = gamma_reps {
        for design in distinct_designs(cells) {
            match empirical_gamma(&design, c, SeedStream::new(master)) {
                Ok(g) => report.gamma.push(g),
                Err(e) => report.gamma_failures.push((design, e.to_string())),
            }
        }
    }
    for result in run_cells(cells, master) {
        match result {
            Ok(c) => report.cells.push(c),
            Err(f) => report.failures.push(f),
        }
    }
    report
}

/// Table-4 style aggregate: one method at one missing fraction, averaged
/// over cells and both parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageRow {
    pub p: f64,
    pub method: Method,
    pub cells: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
}

pub fn shrinkage_summary(cells: &[CellReport]) -> Vec<ShrinkageRow> {
    let mut rows: Vec<(ShrinkageRow, usize)> = Vec::new();
    let mut ps: Vec<f64> = cells.iter().map(|c| c.cell.design.p).collect();
    ps.sort_by(|a, b| a.partial_cmp(b).expect("finite p"));
    ps.dedup();
    for p in ps {
        for c in cells.iter().filter(|c| c.cell.design.p == p) {
            let pos = rows.iter().position(|(r, _)| r.p == p && r.method == c.cell.method);
            let idx = pos.unwrap_or_else(|| {
                rows.push((ShrinkageRow { p, method: c.cell.method, cells: 0, bias: 0.0, rmse: 0.0, coverage: 0.0 }, 0));
                rows.len() - 1
            });
            let (row, n) = &mut rows[idx];
            row.cells += 1;
            for m in &c.params {
                row.bias += m.se_bias;
                row.rmse += m.se_rmse;
                row.coverage += m.coverage;
                *n += 1;
            }
        }
    }
    rows.into_iter()
        .map(|(mut r, n)| {
            let n = n as f64;
            r.bias /= n;
            r.rmse /= n;
            r.coverage /= n;
            r
        })
        .collect()
}

/// Grand averages of point-estimate relative bias and relative SE.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub pd_bias: f64,
    pub ml_bias: f64,
    pub pd_se: f64,
    pub ml_se: f64,
    pub pd_cells: usize,
    pub ml_cells: usize,
}

/// One ML cell per design and `D`: every shrinkage variant shares the same
/// point estimates, so the posterior-mean cell (or the first ML cell)
/// stands for all of them.
pub fn ml_representatives(cells: &[CellReport]) -> Vec<&CellReport> {
    let mut out: Vec<&CellReport> = Vec::new();
    for c in cells.iter().filter(|c| matches!(c.cell.method, Method::Ml(_))) {
        let same = out.iter().position(|o| o.cell.design == c.cell.design && o.cell.d == c.cell.d);
        let is_mean = matches!(c.cell.method, Method::Ml(s) if s.kind() == ShrinkageKind::PosteriorMean);
        match same {
            None => out.push(c),
            Some(i) if is_mean => out[i] = c,
            Some(_) => {}
        }
    }
    out
}

pub fn point_summary(cells: &[CellReport]) -> PointSummary {
    let pd: Vec<&CellReport> = cells.iter().filter(|c| c.cell.method == Method::Pd).collect();
    let ml = ml_representatives(cells);
    let avg = |set: &[&CellReport], f: fn(&ParamMetrics) -> f64| {
        let vals: Vec<f64> = set.iter().flat_map(|c| c.params.iter().map(f)).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    PointSummary {
        pd_bias: avg(&pd, |m| m.rel_bias),
        ml_bias: avg(&ml, |m| m.rel_bias),
        pd_se: avg(&pd, |m| m.rel_se),
        ml_se: avg(&ml, |m| m.rel_se),
        pd_cells: pd.len(),
        ml_cells: ml.len(),
    }
}

const CSV_HEADER: [&str; 11] = ["cell", "pattern", "n", "rho", "p", "d", "method", "seed", "parameter", "metric", "value"];

const PARAM_METRICS: [&str; 9] =
    ["truth", "mean_estimate", "rel_bias", "rel_se", "sd_emp", "mean_se", "se_bias", "se_rmse", "coverage"];

fn metric_values(m: &ParamMetrics) -> [f64; 9] {
    [m.truth, m.mean_estimate, m.rel_bias, m.rel_se, m.sd_emp, m.mean_se, m.se_bias, m.se_rmse, m.coverage]
}

fn cell_columns(i: usize, c: &StudyCell) -> Vec<String> {
    vec![
        i.to_string(),
        c.design.pattern.to_string(),
        c.design.n.to_string(),
        c.design.rho.to_string(),
        c.design.p.to_string(),
        c.d.to_string(),
        c.method.to_string(),
        c.seed.map(|s| s.to_string()).unwrap_or_default(),
    ]
}

/// Long format: one row per (cell, parameter, metric), full precision.
/// Failed cells appear as a single `failed` row.
pub fn write_cells_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    let mut row = |idx: usize, cell: &StudyCell, param: &str, metric: &str, value: f64| -> Result<()> {
        let mut rec = cell_columns(idx, cell);
        rec.extend([param.to_string(), metric.to_string(), value.to_string()]);
        wtr.write_record(&rec)?;
        Ok(())
    };
    for (i, c) in report.cells.iter().enumerate() {
        row(i, &c.cell, "cell", "replications", c.replications as f64)?;
        row(i, &c.cell, "cell", "degenerate", c.degenerate as f64)?;
        for (k, v) in c.mean_gamma_raw.iter().enumerate() {
            row(i, &c.cell, "cell", &format!("gamma_raw_{}", k + 1), *v)?;
        }
        for (k, v) in c.mean_gamma_shrunk.iter().enumerate() {
            row(i, &c.cell, "cell", &format!("gamma_shrunk_{}", k + 1), *v)?;
        }
        for m in &c.params {
            for (name, v) in PARAM_METRICS.iter().zip(metric_values(m)) {
                row(i, &c.cell, &m.name, name, v)?;
            }
        }
    }
    let base = report.cells.len();
    for (j, f) in report.failures.iter().enumerate() {
        row(base + j, &f.cell, "cell", "failed", 1.0)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Inverse of [`write_cells_csv`] for the successful cells.
pub fn read_cells_csv<R: Read>(reader: R) -> Result<Vec<CellReport>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut by_cell: BTreeMap<usize, (StudyCell, Vec<(String, String, f64)>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Config(format!("expected {} columns, got {}", CSV_HEADER.len(), rec.len())));
        }
        let bad = |what: &str| Error::Config(format!("bad {what} in report row"));
        let idx: usize = rec[0].parse().map_err(|_| bad("cell"))?;
        let design = Design {
            pattern: rec[1].parse()?,
            n: rec[2].parse().map_err(|_| bad("n"))?,
            rho: rec[3].parse().map_err(|_| bad("rho"))?,
            p: rec[4].parse().map_err(|_| bad("p"))?,
        };
        let seed = if rec[7].is_empty() { None } else { Some(rec[7].parse().map_err(|_| bad("seed"))?) };
        let cell = StudyCell {
            design,
            d: rec[5].parse().map_err(|_| bad("d"))?,
            method: rec[6].parse()?,
            replications: 0,
            seed,
        };
        let value: f64 = rec[10].parse().map_err(|_| bad("value"))?;
        by_cell.entry(idx).or_insert_with(|| (cell, Vec::new())).1.push((rec[8].to_string(), rec[9].to_string(), value));
    }
    let mut out = Vec::new();
    for (_, (mut cell, rows)) in by_cell {
        if rows.iter().any(|(_, m, _)| m == "failed") {
            continue;
        }
        let get = |param: &str, metric: &str| -> Result<f64> {
            rows.iter()
                .find(|(p, m, _)| p == param && m == metric)
                .map(|r| r.2)
                .ok_or_else(|| Error::Config(format!("missing {param}/{metric}")))
        };
        let replications = get("cell", "replications")? as usize;
        cell.replications = replications;
        let series = |prefix: &str| -> Vec<f64> {
            (1..).map_while(|k| get("cell", &format!("{prefix}_{k}")).ok()).collect()
        };
        let mut params = Vec::new();
        for name in PARAMETERS {
            let v: Vec<f64> = PARAM_METRICS.iter().map(|m| get(name, m)).collect::<Result<_>>()?;
            params.push(ParamMetrics {
                name: name.to_string(),
                truth: v[0],
                mean_estimate: v[1],
                rel_bias: v[2],
                rel_se: v[3],
                sd_emp: v[4],
                mean_se: v[5],
                se_bias: v[6],
                se_rmse: v[7],
                coverage: v[8],
            });
        }
        out.push(CellReport {
            cell,
            replications,
            degenerate: get("cell", "degenerate")? as usize,
            params,
            mean_gamma_raw: series("gamma_raw"),
            mean_gamma_shrunk: series("gamma_shrunk"),
        });
    }
    Ok(out)
}

pub fn write_gamma_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "pattern", "n", "rho", "p", "replications", "degenerate", "eigen_1", "eigen_2", "v_comp_11", "v_comp_12",
        "v_comp_22", "v_obs_11", "v_obs_12", "v_obs_22",
    ])?;
    for g in &report.gamma {
        let d = &g.design;
        let (c, o) = (g.v_comp.as_matrix(), g.v_obs.as_matrix());
        let rec: Vec<String> = [d.pattern.to_string(), d.n.to_string(), d.rho.to_string(), d.p.to_string()]
            .into_iter()
            .chain([g.replications.to_string(), g.degenerate.to_string()])
            .chain(
                [g.eigenvalues[0], g.eigenvalues[1], c[(0, 0)], c[(0, 1)], c[(1, 1)], o[(0, 0)], o[(0, 1)], o[(1, 1)]]
                    .iter()
                    .map(|v| v.to_string()),
            )
            .collect();
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn pct(x: f64) -> String {
    if !x.is_finite() {
        return "n/a".into();
    }
    let v = (100.0 * x).round();
    format!("{}%", if v == 0.0 { 0.0 } else { v })
}

fn find<'a>(cells: &'a [CellReport], design: &Design, d: usize, pd: bool) -> Option<&'a CellReport> {
    if pd {
        cells.iter().find(|c| c.cell.method == Method::Pd && c.cell.design == *design && c.cell.d == d)
    } else {
        ml_representatives(cells).into_iter().find(|c| c.cell.design == *design && c.cell.d == d)
    }
}

fn design_cols(d: &Design) -> String {
    format!("{} | {} | {} | {}", pct(d.p), d.pattern.label().to_uppercase(), d.n, d.rho)
}

/// Four sections: missing-information fractions, point estimates,
/// standard-error estimates (posterior-mean shrinkage) and the shrinkage
/// summary. Percentages are rounded to integers.
pub fn write_markdown<W: Write>(report: &StudyReport, mut writer: W) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# Simulation report\n");

    let _ = writeln!(s, "## Fraction of missing information\n");
    let _ = writeln!(s, "| Missing | Pattern | N | Corr. | Eigenvalue 1 | Eigenvalue 2 | Replications |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for g in &report.gamma {
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {} |",
            design_cols(&g.design),
            g.eigenvalues[0],
            g.eigenvalues[1],
            g.replications
        );
    }
    for (d, reason) in &report.gamma_failures {
        let _ = writeln!(s, "| {} | failed: {reason} | | |", design_cols(d));
    }

    let mut keys: Vec<(Design, usize)> = Vec::new();
    for c in &report.cells {
        if !keys.iter().any(|(d, n)| *d == c.cell.design && *n == c.cell.d) {
            keys.push((c.cell.design, c.cell.d));
        }
    }

    let _ = writeln!(s, "\n## Point estimates\n");
    let _ = writeln!(
        s,
        "| Missing | Pattern | N | Corr. | D | α PD bias | α PD SE | α ML bias | α ML SE | α SE diff | β PD bias | β PD SE | β ML bias | β ML SE | β SE diff |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|");
    for (design, d) in &keys {
        let pd = find(&report.cells, design, *d, true);
        let ml = find(&report.cells, design, *d, false);
        let mut line = format!("| {} | {d} |", design_cols(design));
        for j in 0..2 {
            let cell = |c: Option<&CellReport>, f: fn(&ParamMetrics) -> f64| c.map(|c| f(&c.params[j])).unwrap_or(f64::NAN);
            let diff = cell(ml, |m| m.rel_se) - cell(pd, |m| m.rel_se);
            let _ = write!(
                line,
                " {} | {} | {} | {} | {} |",
                pct(cell(pd, |m| m.rel_bias)),
                pct(cell(pd, |m| m.rel_se)),
                pct(cell(ml, |m| m.rel_bias)),
                pct(cell(ml, |m| m.rel_se)),
                pct(diff)
            );
        }
        let _ = writeln!(s, "{line}");
    }
    if !report.cells.is_empty() {
        let ps = point_summary(&report.cells);
        let _ = writeln!(
            s,
            "\nAverage over both parameters: PD bias {}, SE {}; ML bias {}, SE {}.",
            pct(ps.pd_bias),
            pct(ps.pd_se),
            pct(ps.ml_bias),
            pct(ps.ml_se)
        );
    }

    let _ = writeln!(s, "\n## Standard-error estimates\n");
    let _ = writeln!(
        s,
        "| Missing | Pattern | N | Corr. | D | α PD bias | α PD RMSE | α PD covers | α ML bias | α ML RMSE | α ML covers | β PD bias | β PD RMSE | β PD covers | β ML bias | β ML RMSE | β ML covers |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|");
    for (design, d) in &keys {
        let pd = find(&report.cells, design, *d, true);
        let ml = find(&report.cells, design, *d, false);
        let mut line = format!("| {} | {d} |", design_cols(design));
        for j in 0..2 {
            for c in [pd, ml] {
                match c {
                    Some(c) => {
                        let m = &c.params[j];
                        let _ = write!(line, " {} | {} | {} |", pct(m.se_bias), pct(m.se_rmse), pct(m.coverage));
                    }
                    None => line.push_str(" n/a | n/a | n/a |"),
                }
            }
        }
        let _ = writeln!(s, "{line}");
    }

    let _ = writeln!(s, "\n## Shrinkage summary\n");
    let _ = writeln!(s, "| Missing | Method | Cells | Bias | RMSE | Coverage |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for r in shrinkage_summary(&report.cells) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            pct(r.p),
            r.method,
            r.cells,
            pct(r.bias),
            pct(r.rmse),
            pct(r.coverage)
        );
    }

    if !report.failures.is_empty() {
        let _ = writeln!(s, "\n## Failed cells\n");
        for f in &report.failures {
            let _ = writeln!(s, "- {} D={} {}: {}", design_cols(&f.cell.design), f.cell.d, f.cell.method, f.reason);
        }
    }
    writer.write_all(s.as_bytes())?;
    Ok(())
}
