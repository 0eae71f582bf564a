//! Cohort data model, CSV ingestion and knockoff splitting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CardError, Result};

/// Covariates, observed response, treatment indicator and an optional
/// known propensity column. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    treated: Vec<bool>,
    oracle_propensity: Option<Array1<f64>>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Array1<f64>,
        treated: Vec<bool>,
        oracle_propensity: Option<Array1<f64>>,
    ) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, treated, oracle_propensity, names)
    }

    pub fn with_names(
        x: Array2<f64>,
        y: Array1<f64>,
        treated: Vec<bool>,
        oracle_propensity: Option<Array1<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(CardError::Validation("dataset has no observations".into()));
        }
        if x.nrows() != n || treated.len() != n {
            return Err(CardError::Validation(format!(
                "length mismatch: x has {} rows, y has {}, t has {}",
                x.nrows(),
                n,
                treated.len()
            )));
        }
        if covariate_names.len() != x.ncols() {
            return Err(CardError::Validation(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                x.ncols()
            )));
        }
        if let Some(e) = &oracle_propensity {
            if e.len() != n {
                return Err(CardError::Validation(format!(
                    "propensity column has {} entries, expected {n}",
                    e.len()
                )));
            }
            if let Some(i) = e.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(CardError::Validation(format!(
                    "propensity at row {} is {}, must lie strictly inside (0, 1)",
                    i + 1,
                    e[i]
                )));
            }
        }
        Ok(Dataset {
            x,
            y,
            treated,
            oracle_propensity,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn oracle_propensity(&self) -> Option<ArrayView1<'_, f64>> {
        self.oracle_propensity.as_ref().map(|e| e.view())
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treated[i]).collect()
    }

    pub fn untreated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.treated[i]).collect()
    }

    /// Errors unless both arms are present with at least the given sizes.
    pub fn require_arms(&self, min_treated: usize, min_untreated: usize) -> Result<()> {
        let n1 = self.treated.iter().filter(|&&t| t).count();
        let n0 = self.n() - n1;
        if n1 < min_treated || n0 < min_untreated {
            return Err(CardError::Data(format!(
                "need at least {min_treated} treated and {min_untreated} untreated observations, \
                 found {n1} and {n0}"
            )));
        }
        Ok(())
    }
}

/// Column names of the response, the treatment indicator and the optional
/// propensity. Every other column is a covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub response: String,
    pub treatment: String,
    pub propensity: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            response: "y".into(),
            treatment: "t".into(),
            propensity: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CardError::Schema(format!("column '{name}' not found in header")))
    };
    let y_col = find(&schema.response)?;
    let t_col = find(&schema.treatment)?;
    let e_col = schema.propensity.as_deref().map(find).transpose()?;
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != y_col && c != t_col && Some(c) != e_col)
        .collect();

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut e = Vec::new();
    let mut x = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row, header excluded.
        let row = r + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CardError::Parse {
                    row,
                    column: headers[c].clone(),
                    message: format!("'{raw}' is not a finite number"),
                })
        };
        y.push(cell(y_col)?);
        let tv = cell(t_col)?;
        t.push(match tv {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            other => {
                return Err(CardError::Validation(format!(
                    "treatment column '{}' at row {row} is {other}, expected 0 or 1",
                    headers[t_col]
                )))
            }
        });
        if let Some(c) = e_col {
            e.push(cell(c)?);
        }
        for &c in &covariate_cols {
            x.push(cell(c)?);
        }
    }
    let n = y.len();
    let p = covariate_cols.len();
    let x = Array2::from_shape_vec((n, p), x)
        .map_err(|err| CardError::Invariant(format!("covariate matrix shape: {err}")))?;
    let names = covariate_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::with_names(
        x,
        Array1::from(y),
        t,
        e_col.map(|_| Array1::from(e)),
        names,
    )
}

/// Writes the dataset with the schema's response/treatment/propensity
/// columns first, then covariates. Values use the shortest representation
/// that parses back to the identical `f64`.
pub fn write_csv<W: Write>(d: &Dataset, writer: W, schema: &CsvSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![schema.response.clone(), schema.treatment.clone()];
    let with_e = match (&schema.propensity, d.oracle_propensity()) {
        (Some(name), Some(_)) => {
            header.push(name.clone());
            true
        }
        _ => false,
    };
    header.extend(d.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![
            d.y[i].to_string(),
            if d.treated[i] { "1" } else { "0" }.to_string(),
        ];
        if with_e {
            if let Some(e) = &d.oracle_propensity {
                rec.push(e[i].to_string());
            }
        }
        rec.extend(d.x.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Partition of the cohort into the untreated training pool, the knockoffs
/// and the treated subjects. All index lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KnockoffSplit {
    pub untreated_train: Vec<usize>,
    pub knockoffs: Vec<usize>,
    pub treated: Vec<usize>,
}

impl KnockoffSplit {
    pub fn k(&self) -> usize {
        self.knockoffs.len()
    }
}

/// Samples `ceil(fraction * n0)` untreated observations uniformly without
/// replacement as knockoffs, keeping at least one for training.
pub fn split_knockoffs<R: Rng + ?Sized>(
    d: &Dataset,
    fraction: f64,
    rng: &mut R,
) -> Result<KnockoffSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CardError::Parameter(format!(
            "knockoff fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let untreated = d.untreated_indices();
    let n0 = untreated.len();
    if n0 < 2 {
        return Err(CardError::Data(format!(
            "knockoff splitting needs at least 2 untreated observations, found {n0}"
        )));
    }
    let k = ((fraction * n0 as f64).ceil() as usize).clamp(1, n0 - 1);
    let mut is_knockoff = vec![false; n0];
    for pos in rand::seq::index::sample(rng, n0, k) {
        is_knockoff[pos] = true;
    }
    let mut knockoffs = Vec::with_capacity(k);
    let mut untreated_train = Vec::with_capacity(n0 - k);
    for (&i, &ko) in untreated.iter().zip(&is_knockoff) {
        if ko {
            knockoffs.push(i);
        } else {
            untreated_train.push(i);
        }
    }
    Ok(KnockoffSplit {
        untreated_train,
        knockoffs,
        treated: d.treated_indices(),
    })
}
