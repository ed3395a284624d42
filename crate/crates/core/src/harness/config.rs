//! Study cells and their JSON configuration format.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::combine::{ShrinkageKind, ShrinkageSpec};
use crate::data_model::{delete_mar, delete_mcar, IncompleteDataset};
use crate::error::{Error, Result};
use crate::imputation::ImputationMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    #[serde(alias = "MCAR")]
    Mcar,
    #[serde(alias = "MAR")]
    Mar,
}

impl Pattern {
    pub fn label(self) -> &'static str {
        match self {
            Pattern::Mcar => "mcar",
            Pattern::Mar => "mar",
        }
    }

    /// Deletes Y values. The MAR driver is centred at the generator's X
    /// mean so that `p` is the average deletion rate for `p ≤ 1/2`.
    pub fn amputate(self, data: &IncompleteDataset, p: f64, seed: u64) -> Result<IncompleteDataset> {
        match self {
            Pattern::Mcar => delete_mcar(data, p, seed),
            Pattern::Mar => delete_mar(data, p, 1.0, seed),
        }
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Pattern::Mcar),
            "mar" => Ok(Pattern::Mar),
            other => Err(Error::Config(format!("unknown pattern '{other}'"))),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Imputation method plus, for ML, the shrinkage used in the variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Pd,
    Ml(ShrinkageSpec),
}

impl Method {
    pub fn imputation(self) -> ImputationMethod {
        match self {
            Method::Pd => ImputationMethod::Pd,
            Method::Ml(_) => ImputationMethod::Ml,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pd" {
            return Ok(Method::Pd);
        }
        match s.strip_prefix("ml:") {
            Some(spec) => Ok(Method::Ml(spec.parse()?)),
            None if s == "ml" => Ok(Method::Ml(ShrinkageSpec::default())),
            None => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Pd => f.write_str("pd"),
            Method::Ml(spec) => write!(f, "ml:{spec}"),
        }
    }
}

/// Data-generating conditions shared by every method and imputation count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Design {
    pub pattern: Pattern,
    pub n: usize,
    pub rho: f64,
    pub p: f64,
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Config(format!("n must be at least 3, got {}", self.n)));
        }
        if !(self.rho.abs() < 1.0) || self.rho == 0.0 {
            return Err(Error::Config(format!("rho must be non-zero and inside (-1, 1), got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Config(format!("p must lie in [0, 1), got {}", self.p)));
        }
        Ok(())
    }

    /// True `(α, β)` of the regression of Y on X.
    pub fn truth(&self) -> [f64; 2] {
        [1.0 - self.rho, self.rho]
    }

    /// Stable text key used to derive this design's random streams.
    pub fn key(&self) -> String {
        format!("{}/{}/{}/{}", self.pattern, self.n, self.rho, self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub design: Design,
    pub d: usize,
    pub method: Method,
    pub replications: usize,
    pub seed: Option<u64>,
}

impl StudyCell {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.d < 2 {
            return Err(Error::Config(format!("d must be at least 2, got {}", self.d)));
        }
        if self.replications < 2 {
            return Err(Error::Config(format!("replications must be at least 2, got {}", self.replications)));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellJson {
    pattern: Pattern,
    n: usize,
    rho: f64,
    p: f64,
    d: usize,
    method: String,
    replications: usize,
    #[serde(default)]
    seed: Option<u64>,
}

/// Parses a JSON array of cell objects.
pub fn parse_config(text: &str) -> Result<Vec<StudyCell>> {
    let raw: Vec<CellJson> = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if raw.is_empty() {
        return Err(Error::Config("config has no cells".into()));
    }
    raw.into_iter()
        .map(|c| {
            let cell = StudyCell {
                design: Design { pattern: c.pattern, n: c.n, rho: c.rho, p: c.p },
                d: c.d,
                method: c.method.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
                replications: c.replications,
                seed: c.seed,
            };
            cell.validate()?;
            Ok(cell)
        })
        .collect()
}

/// PD, posterior mean and median, Sheena and simple at .95/.97/.99.
pub fn default_methods() -> Vec<Method> {
    let mut out = vec![
        Method::Pd,
        Method::Ml(ShrinkageSpec::of(ShrinkageKind::PosteriorMean)),
        Method::Ml(ShrinkageSpec::of(ShrinkageKind::PosteriorMedian)),
    ];
    for kind in [ShrinkageKind::Sheena, ShrinkageKind::Simple] {
        for lm in [0.95, 0.97, 0.99] {
            out.push(Method::Ml(ShrinkageSpec::new(kind, lm).expect("valid clamp")));
        }
    }
    out
}

/// The 16 data designs: p × pattern × N × ρ.
pub fn default_designs() -> Vec<Design> {
    let mut out = Vec::with_capacity(16);
    for p in [0.33, 0.67] {
        for pattern in [Pattern::Mar, Pattern::Mcar] {
            for n in [30, 100] {
                for rho in [0.33, 0.67] {
                    out.push(Design { pattern, n, rho, p });
                }
            }
        }
    }
    out
}

/// Full grid: every default design at D = 5 and 25 under every default method.
pub fn default_cells(replications: usize) -> Vec<StudyCell> {
    let mut out = Vec::new();
    for design in default_designs() {
        for d in [5, 25] {
            for method in default_methods() {
                out.push(StudyCell { design, d, method, replications, seed: None });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_round_trip() {
        for m in default_methods() {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ml:sheena:0.95".parse::<Method>().unwrap().to_string(), "ml:sheena:0.95");
        assert!("ml:bogus".parse::<Method>().is_err());
        assert!("em".parse::<Method>().is_err());
    }

    #[test]
    fn config_parsing() {
        let text = r#"[{"pattern": "mar", "n": 30, "rho": 0.33, "p": 0.67, "d": 5,
                        "method": "ml:simple:0.97", "replications": 10, "seed": 4}]"#;
        let cells = parse_config(text).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].design.pattern, Pattern::Mar);
        assert_eq!(cells[0].seed, Some(4));
        let unknown = r#"[{"pattern": "mar", "n": 30, "rho": 0.33, "p": 0.67, "d": 5,
                           "method": "pd", "replications": 10, "colour": 1}]"#;
        assert!(matches!(parse_config(unknown), Err(Error::Config(_))));
        let bad_d = r#"[{"pattern": "mar", "n": 30, "rho": 0.33, "p": 0.67, "d": 1,
                         "method": "pd", "replications": 10}]"#;
        assert!(matches!(parse_config(bad_d), Err(Error::Config(_))));
        assert!(parse_config("[]").is_err());
    }

    #[test]
    fn default_grid_shape() {
        assert_eq!(default_designs().len(), 16);
        assert_eq!(default_methods().len(), 9);
        assert_eq!(default_cells(400).len(), 16 * 2 * 9);
    }
}
