//! Executes a feature program over a panel, order block by order block,
//! producing a feature matrix with full lineage, order and warmup metadata.
//!
//! Variates are independent by construction: no operator ever crosses
//! series, so per-variate evaluation may run on separate threads. Output
//! assembly preserves program order regardless of scheduling.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::ops;
use crate::program::{FeatureProgram, Flow};
use crate::series::{format_sample, FeatureMatrix, FeatureSeries, Panel};

/// Summary of one generation run.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationReport {
    pub per_order_counts: BTreeMap<u32, usize>,
    pub feature_count: usize,
    pub max_warmup: usize,
    pub duration_ms: u64,
    pub program_hash: String,
    pub warnings: Vec<String>,
}

/// Evaluates `program` over every variate of `panel`.
///
/// Features whose warmup meets or exceeds the panel length are emitted fully
/// missing, with a warning in the report rather than an error.
pub fn generate(
    panel: &Panel,
    program: &FeatureProgram,
) -> Result<(FeatureMatrix, GenerationReport)> {
    program.validate()?;
    let started = Stopwatch::start();

    let per_variate = evaluate_all_variates(panel, program)?;
    // warnings depend only on the program and panel length, so they are
    // identical across variates; keep one copy
    let warnings = per_variate.first().map(|(_, w)| w.clone()).unwrap_or_default();
    let features: Vec<Vec<FeatureSeries>> = per_variate.into_iter().map(|(f, _)| f).collect();

    let mut per_order_counts = BTreeMap::new();
    for block in &program.orders {
        *per_order_counts.entry(block.order).or_insert(0) += block.feature_count();
    }

    let matrix = FeatureMatrix {
        variate_names: panel.names().to_vec(),
        time: panel.time().to_vec(),
        features,
        program_hash: program.hash(),
        generated_unix_ms: now_unix_ms(),
    };
    matrix.validate()?;

    let report = GenerationReport {
        per_order_counts,
        feature_count: matrix.feature_count(),
        max_warmup: matrix.max_warmup(),
        duration_ms: started.elapsed_ms(),
        program_hash: matrix.program_hash.clone(),
        warnings,
    };
    Ok((matrix, report))
}

/// Evaluates one closed expression (no named references) over a single
/// variate.
pub fn evaluate_expr(panel: &Panel, variate: usize, expr: &Expr) -> Result<FeatureSeries> {
    let env = Environment::default();
    Scope { env: &env, from: 0 }.eval(expr, panel.variate(variate))
}

type VariateOutput = (Vec<FeatureSeries>, Vec<String>);

fn evaluate_all_variates(panel: &Panel, program: &FeatureProgram) -> Result<Vec<VariateOutput>> {
    let n = panel.n_variates();
    let cap = thread_cap().min(n).max(1);
    if cap <= 1 {
        return (0..n).map(|i| evaluate_variate(panel.variate(i), program)).collect();
    }
    parallel_variates(panel, program, cap)
}

#[cfg(not(target_arch = "wasm32"))]
fn parallel_variates(
    panel: &Panel,
    program: &FeatureProgram,
    cap: usize,
) -> Result<Vec<VariateOutput>> {
    let n = panel.n_variates();
    let chunk = n.div_ceil(cap);
    let mut slots: Vec<Option<Result<VariateOutput>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (c, out) in slots.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (j, slot) in out.iter_mut().enumerate() {
                    *slot = Some(evaluate_variate(panel.variate(c * chunk + j), program));
                }
            });
        }
    });
    // first error in variate order wins, keeping diagnostics deterministic
    slots
        .into_iter()
        .map(|slot| slot.expect("every variate slot is filled"))
        .collect()
}

#[cfg(target_arch = "wasm32")]
fn parallel_variates(
    panel: &Panel,
    program: &FeatureProgram,
    _cap: usize,
) -> Result<Vec<VariateOutput>> {
    (0..panel.n_variates())
        .map(|i| evaluate_variate(panel.variate(i), program))
        .collect()
}

fn thread_cap() -> usize {
    #[cfg(target_arch = "wasm32")]
    {
        1
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        let available = std::thread::available_parallelism().map(usize::from).unwrap_or(1);
        match std::env::var("FEATPROG_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
            Some(n) if n >= 1 => available.min(n),
            _ => available,
        }
    }
}

/// Features generated so far for one variate, in program order.
#[derive(Default)]
struct Environment {
    by_name: HashMap<String, usize>,
    defs: Vec<(Expr, FeatureSeries)>,
}

/// A view of the environment restricted to entries at index `from` or later;
/// this is how the `none` flow hides earlier order blocks.
struct Scope<'a> {
    env: &'a Environment,
    from: usize,
}

impl Scope<'_> {
    fn entry(&self, name: &str) -> Option<&(Expr, FeatureSeries)> {
        self.env
            .by_name
            .get(name)
            .filter(|&&i| i >= self.from)
            .map(|&i| &self.env.defs[i])
    }

    fn eval(&self, expr: &Expr, raw: &[Option<f64>]) -> Result<FeatureSeries> {
        match expr {
            Expr::Raw => Ok(FeatureSeries::from_raw(raw)),
            Expr::Ref(name) => self
                .entry(name)
                .map(|(_, s)| s.clone())
                .ok_or_else(|| Error::Program(format!("unresolved feature reference `{name}`"))),
            Expr::Shift(e, k) => ops::shift(&self.eval(e, raw)?, *k),
            Expr::Window(e, w, stat) => ops::window(&self.eval(e, raw)?, *w, *stat),
            Expr::Diff(a, b, s) => ops::difference(&self.eval(a, raw)?, &self.eval(b, raw)?, *s),
            Expr::Ratio(a, b) => ops::ratio(&self.eval(a, raw)?, &self.eval(b, raw)?),
            Expr::Square(e) => Ok(ops::square(&self.eval(e, raw)?)),
        }
    }

    fn expand(&self, expr: &Expr) -> Result<Expr> {
        expr.expand(&|n| self.entry(n).map(|(e, _)| e.clone()))
    }
}

fn evaluate_variate(raw: &[Option<f64>], program: &FeatureProgram) -> Result<VariateOutput> {
    let t_len = raw.len();
    let mut env = Environment::default();
    let mut outputs = Vec::with_capacity(program.feature_count());
    let mut warnings = Vec::new();
    let mut block_start = 0usize;

    for block in &program.orders {
        let visible_from = match program.flow {
            Flow::All => 0,
            Flow::None => block_start,
        };
        let exprs = block
            .basic
            .iter()
            .map(|e| (None, e))
            .chain(block.custom.iter().map(|(n, e)| (Some(n.as_str()), e)));
        for (custom_name, expr) in exprs {
            let scope = Scope { env: &env, from: visible_from };
            let mut series = match scope.eval(expr, raw) {
                Ok(s) => s,
                // a shift past the panel's end leaves nothing defined; the
                // engine contract is a fully-missing feature plus a warning
                Err(Error::EmptyOutput(_)) => {
                    let expanded = scope.expand(expr)?;
                    let warmup = expr.warmup_with(&|n| scope.entry(n).map(|(_, s)| s.warmup))?;
                    let order = expr.order_with(&|n| scope.entry(n).map(|(_, s)| s.order))?;
                    let lineage = expanded.to_string();
                    FeatureSeries {
                        name: lineage.clone(),
                        order,
                        warmup,
                        lineage,
                        values: vec![None; t_len],
                    }
                }
                Err(Error::Program(msg)) => {
                    let label = custom_name.map_or_else(|| expr.to_string(), str::to_string);
                    return Err(Error::Program(format!(
                        "order-{} feature `{label}`: {msg}",
                        block.order
                    )));
                }
                Err(other) => return Err(other),
            };
            if let Some(name) = custom_name {
                series.name = name.to_string();
            }
            if series.order != block.order {
                return Err(Error::Program(format!(
                    "feature `{}` evaluated to order {} in an order-{} block",
                    series.name, series.order, block.order
                )));
            }
            if series.warmup >= t_len {
                warnings.push(format!(
                    "feature `{}` has warmup {} on a panel of length {t_len}; \
                     emitted fully missing",
                    series.name, series.warmup
                ));
            }
            let expanded = scope.expand(expr)?;
            env.by_name.insert(series.name.clone(), env.defs.len());
            env.defs.push((expanded, series.clone()));
            outputs.push(series);
        }
        block_start = env.defs.len();
    }
    Ok((outputs, warnings))
}

/// Writes the feature matrix as wide CSV: a `time` column, then one column
/// per (variate, feature) pair named `variate::feature`, variate-major in
/// program order. Missing samples serialize as empty cells.
pub fn export_features<W: Write>(
    matrix: &FeatureMatrix,
    drop_warmup_rows: bool,
    writer: W,
) -> Result<()> {
    let dropped;
    let m = if drop_warmup_rows {
        dropped = matrix.drop_warmup()?;
        &dropped
    } else {
        matrix
    };
    if m.feature_count() == 0 {
        return Err(Error::EmptyOutput("matrix has no features".into()));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    for (v, name) in m.variate_names.iter().enumerate() {
        for f in &m.features[v] {
            header.push(format!("{name}::{}", f.name));
        }
    }
    wtr.write_record(&header)?;
    for t in 0..m.time.len() {
        let mut row = vec![m.time[t].to_string()];
        for fs in &m.features {
            for f in fs {
                row.push(format_sample(f.values[t]));
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Convenience wrapper returning the CSV document as a string.
pub fn export_features_string(matrix: &FeatureMatrix, drop_warmup_rows: bool) -> Result<String> {
    let mut buf = Vec::new();
    export_features(matrix, drop_warmup_rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Protocol(format!("non-utf8 csv: {e}")))
}

struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Stopwatch(std::time::Instant::now())
        }
        #[cfg(target_arch = "wasm32")]
        {
            Stopwatch()
        }
    }

    fn elapsed_ms(&self) -> u64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.0.elapsed().as_millis() as u64
        }
        #[cfg(target_arch = "wasm32")]
        {
            0
        }
    }
}

fn now_unix_ms() -> u64 {
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
    #[cfg(target_arch = "wasm32")]
    {
        0
    }
}
