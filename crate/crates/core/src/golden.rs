//! Published capacities and stationary parameters, and the comparison
//! behind `nsp reproduce`.
//!
//! The data file carries one value per row with the table it came from, so
//! each tolerance decision can be audited against its source.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{alpha_c, CapacityResult};
use crate::error::{Error, Result};
use crate::free_energy::{Level, LiftingParams};
use crate::stationarity::{closed_form_params, gamma_sq_p_partial, SolverConfig};

const GOLDEN_CSV: &str = include_str!("../data/golden.csv");

pub const TABLES: [u8; 5] = [1, 2, 3, 4, 5];
pub const CAPACITY_TOL: f64 = 5e-3;
pub const PARAM_TOL: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCell {
    pub table: u8,
    /// Label of the published table the value was copied from.
    pub source: String,
    pub kappa: f64,
    pub level: Level,
    pub quantity: String,
    pub value: f64,
}

/// All published cells.
pub fn golden_cells() -> Result<Vec<GoldenCell>> {
    let mut rdr = csv::Reader::from_reader(GOLDEN_CSV.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::InvalidInput(format!("golden data: {e}"))))
        .collect()
}

/// Cells of one table.
pub fn table_cells(table: u8) -> Result<Vec<GoldenCell>> {
    if !TABLES.contains(&table) {
        return Err(Error::InvalidInput(format!(
            "no table {table}; expected 1-5"
        )));
    }
    Ok(golden_cells()?
        .into_iter()
        .filter(|c| c.table == table)
        .collect())
}

/// Relative tolerance for a quantity.
pub fn tolerance(quantity: &str) -> f64 {
    if quantity == "alpha_c" {
        CAPACITY_TOL
    } else {
        PARAM_TOL
    }
}

/// Named entry of a parameter set; `None` if the level has no such entry.
pub fn param_value(lp: &LiftingParams, quantity: &str) -> Option<f64> {
    let at = |v: &[f64], i: usize| v.get(i).copied();
    match quantity {
        "gamma_sq" => Some(lp.gamma_sq),
        "gamma_sq_p" => Some(lp.gamma_sq_p),
        "p2" if lp.level.is_full() => at(&lp.p, 0),
        "p3" => at(&lp.p, 1),
        "q2" if lp.level.is_full() => at(&lp.q, 0),
        "q3" => at(&lp.q, 1),
        "c2" => at(&lp.c, 0),
        "c3" => at(&lp.c, 1),
        _ => None,
    }
}

fn rel_error(computed: f64, reference: f64) -> f64 {
    (computed - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproCell {
    pub source: String,
    pub kappa: f64,
    pub level: Level,
    pub quantity: String,
    pub published: f64,
    pub computed: Option<f64>,
    pub rel_error: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    /// Set when the computation failed.
    pub error: Option<String>,
}

/// A published `gamma_sq_p` or `c_k` against the closed form evaluated at
/// the published `p`, `q` (or `c2` for the partial level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub source: String,
    pub kappa: f64,
    pub level: Level,
    pub quantity: String,
    pub published: f64,
    pub closed_form: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub table: u8,
    pub cells: Vec<ReproCell>,
    pub consistency: Vec<ConsistencyCell>,
    pub pass: bool,
}

impl ReproReport {
    pub fn failures(&self) -> impl Iterator<Item = &ReproCell> {
        self.cells.iter().filter(|c| !c.pass)
    }
}

type RowKey = (String, u64, Level);

fn row_key(c: &GoldenCell) -> RowKey {
    (c.source.clone(), c.kappa.to_bits(), c.level)
}

fn consistency_checks(cells: &[GoldenCell]) -> Vec<ConsistencyCell> {
    let mut rows: BTreeMap<RowKey, BTreeMap<&str, f64>> = BTreeMap::new();
    for c in cells {
        rows.entry(row_key(c))
            .or_default()
            .insert(c.quantity.as_str(), c.value);
    }
    let mut out = Vec::new();
    for ((source, kbits, level), vals) in rows {
        let get = |q: &str| vals.get(q).copied();
        let predicted: Vec<(&str, f64)> = match level {
            Level::TwoPartial => match get("c2") {
                Some(c2) => vec![("gamma_sq_p", gamma_sq_p_partial(c2))],
                None => vec![],
            },
            Level::TwoFull | Level::ThreeFull => {
                let names: &[&str] = if level == Level::TwoFull {
                    &["2"]
                } else {
                    &["2", "3"]
                };
                let p: Option<Vec<f64>> = names.iter().map(|k| get(&format!("p{k}"))).collect();
                let q: Option<Vec<f64>> = names.iter().map(|k| get(&format!("q{k}"))).collect();
                match (p, q) {
                    (Some(p), Some(q)) => match closed_form_params(&p, &q) {
                        Ok((gp, c)) => {
                            let mut v = vec![("gamma_sq_p", gp)];
                            v.push(("c2", c[0]));
                            if c.len() > 1 {
                                v.push(("c3", c[1]));
                            }
                            v
                        }
                        Err(_) => vec![],
                    },
                    _ => vec![],
                }
            }
            Level::One => vec![],
        };
        for (q, formula) in predicted {
            if let Some(published) = get(q) {
                let rel = rel_error(formula, published);
                out.push(ConsistencyCell {
                    source: source.clone(),
                    kappa: f64::from_bits(kbits),
                    level,
                    quantity: q.to_string(),
                    published,
                    closed_form: formula,
                    rel_error: rel,
                    pass: rel <= PARAM_TOL,
                });
            }
        }
    }
    out
}

/// Recomputes every cell of `table` and compares it with the published value.
pub fn reproduce(table: u8, cfg: &SolverConfig) -> Result<ReproReport> {
    let cells = table_cells(table)?;
    let mut points: Vec<(u64, Level)> =
        cells.iter().map(|c| (c.kappa.to_bits(), c.level)).collect();
    points.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(a.1.cmp(&b.1))
    });
    points.dedup();
    let solved: BTreeMap<(u64, Level), std::result::Result<CapacityResult, String>> = points
        .par_iter()
        .map(|&(kb, level)| {
            (
                (kb, level),
                alpha_c(f64::from_bits(kb), level, cfg).map_err(|e| e.to_string()),
            )
        })
        .collect();

    let out: Vec<ReproCell> = cells
        .iter()
        .map(|c| {
            let tol = tolerance(&c.quantity);
            let base = ReproCell {
                source: c.source.clone(),
                kappa: c.kappa,
                level: c.level,
                quantity: c.quantity.clone(),
                published: c.value,
                computed: None,
                rel_error: None,
                tolerance: tol,
                pass: false,
                error: None,
            };
            match &solved[&(c.kappa.to_bits(), c.level)] {
                Err(e) => ReproCell {
                    error: Some(e.clone()),
                    ..base
                },
                Ok(r) => {
                    let v = if c.quantity == "alpha_c" {
                        Some(r.alpha_c)
                    } else {
                        param_value(&r.params, &c.quantity)
                    };
                    match v {
                        None => ReproCell {
                            error: Some(format!("level {} has no {}", c.level, c.quantity)),
                            ..base
                        },
                        Some(v) => {
                            let rel = rel_error(v, c.value);
                            ReproCell {
                                computed: Some(v),
                                rel_error: Some(rel),
                                pass: rel <= tol,
                                ..base
                            }
                        }
                    }
                }
            }
        })
        .collect();
    let consistency = consistency_checks(&cells);
    let pass = out.iter().all(|c| c.pass) && consistency.iter().all(|c| c.pass);
    Ok(ReproReport {
        table,
        cells: out,
        consistency,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_file_parses() {
        let cells = golden_cells().unwrap();
        assert!(!cells.is_empty());
        for t in TABLES {
            assert!(cells.iter().any(|c| c.table == t));
        }
        assert!(cells.iter().all(|c| c.value.is_finite() && c.value > 0.0));
    }

    #[test]
    fn table_three_has_twelve_cells() {
        assert_eq!(table_cells(3).unwrap().len(), 12);
    }

    #[test]
    fn table_two_has_sixty_cells() {
        let cells = table_cells(2).unwrap();
        assert_eq!(cells.len(), 60);
        assert!(cells.iter().all(|c| c.level == Level::TwoFull));
    }

    #[test]
    fn published_parameters_satisfy_closed_forms() {
        for t in TABLES {
            let cells = table_cells(t).unwrap();
            for c in consistency_checks(&cells) {
                assert!(c.pass, "{c:?}");
            }
        }
    }

    #[test]
    fn unknown_table_rejected() {
        assert!(table_cells(7).is_err());
    }
}
