//! Core data containers: aligned multivariate panels and derived feature
//! matrices.
//!
//! Missing values are explicit (`None`), never sentinel numerics. Every
//! operator that consumes a missing sample emits a missing sample, which is
//! what makes warmup bookkeeping compositional and provable.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// An N-variate time series of length T with a shared, strictly increasing
/// time index. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    names: Vec<String>,
    time: Vec<i64>,
    /// `values[variate][t]`; `None` marks a missing sample.
    values: Vec<Vec<Option<f64>>>,
}

impl Panel {
    /// Builds a panel from raw rows (one row per variate). Non-finite inputs
    /// are converted to missing samples. Variate names default to `v0..vN-1`
    /// and the time index to `0..T-1`.
    pub fn new(rows: Vec<Vec<f64>>, time: Option<Vec<i64>>) -> Result<Self> {
        let names = (0..rows.len()).map(|i| format!("v{i}")).collect();
        let masked = rows
            .into_iter()
            .map(|row| row.into_iter().map(|x| x.is_finite().then_some(x)).collect())
            .collect();
        Self::from_masked(names, masked, time)
    }

    /// Builds a panel from pre-masked rows with explicit variate names.
    pub fn from_masked(
        names: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
        time: Option<Vec<i64>>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("panel needs at least one variate".into()));
        }
        let t_len = values[0].len();
        if t_len == 0 {
            return Err(Error::Shape("panel needs at least one time step".into()));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != t_len {
                return Err(Error::Shape(format!(
                    "variate {i} has length {}, expected {t_len}",
                    row.len()
                )));
            }
        }
        if names.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} names for {} variates",
                names.len(),
                values.len()
            )));
        }
        let time = match time {
            Some(t) => {
                if t.len() != t_len {
                    return Err(Error::Shape(format!(
                        "time index has length {}, expected {t_len}",
                        t.len()
                    )));
                }
                if let Some(pos) = t.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(Error::TimeIndex(pos + 1));
                }
                t
            }
            None => (0..t_len as i64).collect(),
        };
        Ok(Panel { names, time, values })
    }

    pub fn n_variates(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn time(&self) -> &[i64] {
        &self.time
    }

    pub fn variate(&self, i: usize) -> &[Option<f64>] {
        &self.values[i]
    }

    /// Reads the wide CSV format: optional leading `time` column, then one
    /// column per variate. Empty cells and `NaN` mark missing samples.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::Shape("csv has no columns".into()));
        }
        let has_time = headers.get(0) == Some("time");
        let first_variate = usize::from(has_time);
        let names: Vec<String> = headers.iter().skip(first_variate).map(String::from).collect();
        if names.is_empty() {
            return Err(Error::Shape("csv has no variate columns".into()));
        }

        let mut time: Vec<i64> = Vec::new();
        let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Shape(format!(
                    "csv row {} has {} cells, expected {}",
                    row_idx + 1,
                    record.len(),
                    headers.len()
                )));
            }
            if has_time {
                let cell = record.get(0).unwrap_or("");
                let stamp = cell.trim().parse::<i64>().map_err(|_| {
                    Error::Parameter(format!("csv row {}: bad time stamp `{cell}`", row_idx + 1))
                })?;
                time.push(stamp);
            }
            for (k, cell) in record.iter().skip(first_variate).enumerate() {
                values[k].push(parse_sample(cell, row_idx)?);
            }
        }
        Self::from_masked(names, values, has_time.then_some(time))
    }

    /// Writes the wide CSV format with a leading `time` column.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![self.time[t].to_string()];
            for v in &self.values {
                row.push(format_sample(v[t]));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_sample(cell: &str, row_idx: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let x: f64 = cell.parse().map_err(|_| {
        Error::Parameter(format!("csv row {}: bad sample `{cell}`", row_idx + 1))
    })?;
    Ok(x.is_finite().then_some(x))
}

pub(crate) fn format_sample(x: Option<f64>) -> String {
    // f64 Display is the shortest representation that parses back exactly.
    x.map_or_else(String::new, |v| format!("{v}"))
}

/// One derived series with its order, analytic warmup, and the canonical
/// expression that regenerates it from the raw panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub name: String,
    /// Derivative order: 0 = position-like, 1 = momentum-like, 2+ = higher.
    pub order: u32,
    /// Count of leading guaranteed-missing steps.
    pub warmup: usize,
    /// Canonical, fully expanded expression string.
    pub lineage: String,
    pub values: Vec<Option<f64>>,
}

impl FeatureSeries {
    /// Wraps a raw variate as the order-0 identity feature.
    pub fn from_raw(values: &[Option<f64>]) -> Self {
        FeatureSeries {
            name: "raw".into(),
            order: 0,
            warmup: 0,
            lineage: "raw".into(),
            values: values.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every defined sample sits at `t >= warmup` and every
    /// `t < warmup` is missing.
    pub fn warmup_consistent(&self) -> bool {
        self.values.iter().take(self.warmup).all(Option::is_none)
    }
}

/// K features per variate, same K and same names across variates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub variate_names: Vec<String>,
    pub time: Vec<i64>,
    /// `features[variate][k]`.
    pub features: Vec<Vec<FeatureSeries>>,
    pub program_hash: String,
    pub generated_unix_ms: u64,
}

impl FeatureMatrix {
    /// Number of features per variate (K).
    pub fn feature_count(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Largest warmup over all features; identical across variates because
    /// warmup depends only on the expression, not the data.
    pub fn max_warmup(&self) -> usize {
        self.features
            .iter()
            .flat_map(|fs| fs.iter().map(|f| f.warmup))
            .max()
            .unwrap_or(0)
    }

    /// Truncates every series to `t >= max warmup` so no guaranteed-missing
    /// leading samples remain.
    pub fn drop_warmup(&self) -> Result<FeatureMatrix> {
        let cut = self.max_warmup();
        if cut >= self.time.len() {
            return Err(Error::EmptyOutput(format!(
                "max warmup {cut} leaves no rows out of {}",
                self.time.len()
            )));
        }
        let features = self
            .features
            .iter()
            .map(|fs| {
                fs.iter()
                    .map(|f| FeatureSeries {
                        name: f.name.clone(),
                        order: f.order,
                        warmup: 0,
                        lineage: f.lineage.clone(),
                        values: f.values[cut..].to_vec(),
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureMatrix {
            variate_names: self.variate_names.clone(),
            time: self.time[cut..].to_vec(),
            features,
            program_hash: self.program_hash.clone(),
            generated_unix_ms: self.generated_unix_ms,
        })
    }

    /// Checks the structural invariants: equal K, unique names per variate,
    /// series lengths matching the time index.
    pub fn validate(&self) -> Result<()> {
        let k = self.feature_count();
        for (i, fs) in self.features.iter().enumerate() {
            if fs.len() != k {
                return Err(Error::Shape(format!(
                    "variate {i} has {} features, expected {k}",
                    fs.len()
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for f in fs {
                if !seen.insert(f.name.as_str()) {
                    return Err(Error::Program(format!("duplicate feature name `{}`", f.name)));
                }
                if f.values.len() != self.time.len() {
                    return Err(Error::Shape(format!(
                        "feature `{}` has length {}, expected {}",
                        f.name,
                        f.values.len(),
                        self.time.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
