//! Desk-scale evaluation harness: chronological 80/20 split, pooled
//! one-step-ahead ridge baseline on basic vs. extended features, R^2 and
//! Pearson metrics, synthetic dataset construction, and resemblance scoring
//! against hand-crafted features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::generate;
use crate::error::{Error, Result};
use crate::ops::{self, WindowStat};
use crate::program::{resemblance_program, FeatureProgram, Resemblance};
use crate::series::{FeatureMatrix, FeatureSeries, Panel};
use crate::spingas::{simulate_panel, SpinGasParams};

/// Train/test membership; test rows are strictly later in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

/// One pooled supervised row: features for variate `variate` at time `t`,
/// target one step ahead.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub variate: usize,
    pub t: usize,
    pub features: Vec<f64>,
    pub target: f64,
    pub split: SplitTag,
}

#[derive(Debug, Clone)]
pub struct SupervisedTable {
    pub rows: Vec<TableRow>,
    /// Feature vector length.
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// First time position belonging to the test period.
    pub first_test_t: usize,
}

impl SupervisedTable {
    pub fn train_rows(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().filter(|r| r.split == SplitTag::Train)
    }

    pub fn test_rows(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().filter(|r| r.split == SplitTag::Test)
    }

    /// The (variate, t) identity of every test row, for protocol checks.
    pub fn test_keys(&self) -> Vec<(usize, usize)> {
        self.test_rows().map(|r| (r.variate, r.t)).collect()
    }
}

/// Builds the pooled table with the panel itself as the target source
/// (`y_{i,t} = x_{i,t+1}`).
pub fn build_table(panel: &Panel, matrix: &FeatureMatrix, split: f64) -> Result<SupervisedTable> {
    build_table_with(panel, matrix, panel, split, None)
}

/// Builds the pooled table with an explicit target panel; the target for a
/// row at time t is the target panel's value at t+1.
///
/// `start_override` forces the first usable time position, so two feature
/// sets with different warmups can be evaluated on identical rows.
pub fn build_table_with(
    panel: &Panel,
    matrix: &FeatureMatrix,
    targets: &Panel,
    split: f64,
    start_override: Option<usize>,
) -> Result<SupervisedTable> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Parameter(format!("split must be in (0, 1), got {split}")));
    }
    if matrix.time != panel.time() {
        return Err(Error::Protocol("feature matrix is not aligned with the panel".into()));
    }
    if targets.len() != panel.len() || targets.n_variates() != panel.n_variates() {
        return Err(Error::Protocol("target panel shape differs from the input panel".into()));
    }
    let t_len = panel.len();
    let start = matrix.max_warmup().max(start_override.unwrap_or(0));
    // the last time step has no t+1 target
    let n_usable = (t_len.saturating_sub(1)).saturating_sub(start);
    if n_usable < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n_usable });
    }
    let n_train_times = ((split * n_usable as f64).ceil() as usize).min(n_usable);
    let first_test_t = start + n_train_times;

    let k = matrix.feature_count();
    let mut rows = Vec::new();
    let mut n_train = 0;
    let mut n_test = 0;
    for v in 0..panel.n_variates() {
        let feats = &matrix.features[v];
        let target_series = targets.variate(v);
        'times: for t in start..(t_len - 1) {
            let Some(y) = target_series[t + 1] else { continue };
            let mut x = Vec::with_capacity(k);
            for f in feats {
                match f.values[t] {
                    Some(val) => x.push(val),
                    None => continue 'times,
                }
            }
            let split_tag = if t < first_test_t { SplitTag::Train } else { SplitTag::Test };
            match split_tag {
                SplitTag::Train => n_train += 1,
                SplitTag::Test => n_test += 1,
            }
            rows.push(TableRow { variate: v, t, features: x, target: y, split: split_tag });
        }
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(SupervisedTable { rows, k, n_train, n_test, first_test_t })
}

/// Closed-form ridge regression on standardized features with an
/// unpenalized intercept.
#[derive(Debug, Clone, Serialize)]
pub struct RidgeModel {
    /// Weights in standardized feature space.
    pub weights: Vec<f64>,
    /// Train-set target mean.
    pub intercept: f64,
    pub lambda: f64,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
}

impl RidgeModel {
    pub fn predict_one(&self, features: &[f64]) -> f64 {
        let mut y = self.intercept;
        for ((&x, &m), (&s, &w)) in features
            .iter()
            .zip(&self.feature_means)
            .zip(self.feature_scales.iter().zip(&self.weights))
        {
            y += w * (x - m) / s;
        }
        y
    }
}

/// Fits the ridge model on the train rows. Training on fewer rows than
/// features is allowed but ill-conditioned; callers may want to warn.
#[allow(clippy::needless_range_loop)]
pub fn ridge_fit(table: &SupervisedTable, lambda: f64) -> Result<RidgeModel> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Parameter("lambda must be finite and >= 0".into()));
    }
    let train: Vec<&TableRow> = table.train_rows().collect();
    if train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = train.len() as f64;
    let k = table.k;

    let mut means = vec![0.0; k];
    for row in &train {
        for (m, &x) in means.iter_mut().zip(&row.features) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut scales = vec![0.0; k];
    for row in &train {
        for ((s, &m), &x) in scales.iter_mut().zip(&means).zip(&row.features) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut scales {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            // constant feature: centered values are all zero, weight inert
            *s = 1.0;
        }
    }

    let y_mean = train.iter().map(|r| r.target).sum::<f64>() / n;

    // normal equations in standardized space: (X'X + lambda I) w = X'y
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    let mut z = vec![0.0; k];
    for row in &train {
        for i in 0..k {
            z[i] = (row.features[i] - means[i]) / scales[i];
        }
        let yc = row.target - y_mean;
        for i in 0..k {
            b[i] += z[i] * yc;
            for j in i..k {
                a[i][j] += z[i] * z[j];
            }
        }
    }
    for i in 0..k {
        a[i][i] += lambda;
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    let weights = cholesky_solve(a, b)?;
    Ok(RidgeModel { weights, intercept: y_mean, lambda, feature_means: means, feature_scales: scales })
}

pub fn ridge_predict(model: &RidgeModel, rows: &[&TableRow]) -> Vec<f64> {
    rows.iter().map(|r| model.predict_one(&r.features)).collect()
}

/// Solves `A x = b` for symmetric positive-definite A.
#[allow(clippy::needless_range_loop)]
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let k = b.len();
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i][j];
            for m in 0..j {
                sum -= a[i][m] * a[j][m];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Solver(
                        "normal matrix is singular or indefinite; use lambda > 0".into(),
                    ));
                }
                a[i][j] = sum.sqrt();
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
    }
    // forward substitution L z = b
    for i in 0..k {
        let mut sum = b[i];
        for m in 0..i {
            sum -= a[i][m] * b[m];
        }
        b[i] = sum / a[i][i];
    }
    // back substitution L' x = z
    for i in (0..k).rev() {
        let mut sum = b[i];
        for m in (i + 1)..k {
            sum -= a[m][i] * b[m];
        }
        b[i] = sum / a[i][i];
    }
    Ok(b)
}

/// `R^2 = 1 - sum (a - p)^2 / sum (a - mean(a))^2`.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_metric_inputs(actual, predicted)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Metric("r2 undefined for zero-variance actuals".into()));
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample Pearson correlation; undefined when either side is constant.
pub fn pearson(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_metric_inputs(actual, predicted)?;
    let n = actual.len() as f64;
    let ma = actual.iter().sum::<f64>() / n;
    let mp = predicted.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vp = 0.0;
    for (a, p) in actual.iter().zip(predicted) {
        cov += (a - ma) * (p - mp);
        va += (a - ma) * (a - ma);
        vp += (p - mp) * (p - mp);
    }
    if va == 0.0 || vp == 0.0 {
        return Err(Error::Metric("pearson undefined for constant inputs".into()));
    }
    Ok(cov / (va.sqrt() * vp.sqrt()))
}

fn check_metric_inputs(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "metric inputs have lengths {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.len() < 2 {
        return Err(Error::Metric("metrics need at least 2 points".into()));
    }
    Ok(())
}

/// Out-of-sample scores for one feature set.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub r2: f64,
    pub pearson: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub program_hash: String,
    #[serde(skip)]
    pub test_keys: Vec<(usize, usize)>,
}

/// Fits on the train rows and scores the test rows.
pub fn evaluate_table(
    table: &SupervisedTable,
    lambda: f64,
    program_hash: &str,
) -> Result<EvalOutcome> {
    let model = ridge_fit(table, lambda)?;
    let test: Vec<&TableRow> = table.test_rows().collect();
    let predictions = ridge_predict(&model, &test);
    let actuals: Vec<f64> = test.iter().map(|r| r.target).collect();
    Ok(EvalOutcome {
        r2: r2(&actuals, &predictions)?,
        pearson: pearson(&actuals, &predictions)?,
        n_train: table.n_train,
        n_test: table.n_test,
        program_hash: program_hash.to_string(),
        test_keys: table.test_keys(),
    })
}

/// Side-by-side scores for basic vs. extended features on identical test
/// rows.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub r2_basic: f64,
    pub r2_ext: f64,
    pub pearson_basic: f64,
    pub pearson_ext: f64,
    pub delta_r2: f64,
    pub delta_pearson: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub lambda: f64,
    pub program_hash: String,
    pub program_hash_basic: String,
}

impl CompareReport {
    pub fn human_table(&self) -> String {
        format!(
            "{:<12} {:>12} {:>12} {:>12}\n{:<12} {:>12.6} {:>12.6} {:>+12.6}\n{:<12} {:>12.6} {:>12.6} {:>+12.6}\n\
             rows: train {} / test {} | lambda {:.3e}",
            "metric", "basic", "extended", "delta",
            "r2", self.r2_basic, self.r2_ext, self.delta_r2,
            "pearson", self.pearson_basic, self.pearson_ext, self.delta_pearson,
            self.n_train, self.n_test, self.lambda,
        )
    }
}

/// Checks that both outcomes were computed on identical test rows and
/// assembles the comparison.
pub fn compare(basic: &EvalOutcome, extended: &EvalOutcome, lambda: f64) -> Result<CompareReport> {
    if basic.test_keys != extended.test_keys {
        return Err(Error::Protocol(
            "basic and extended evaluations used different test rows".into(),
        ));
    }
    Ok(CompareReport {
        r2_basic: basic.r2,
        r2_ext: extended.r2,
        pearson_basic: basic.pearson,
        pearson_ext: extended.pearson,
        delta_r2: extended.r2 - basic.r2,
        delta_pearson: extended.pearson - basic.pearson,
        n_train: basic.n_train,
        n_test: basic.n_test,
        lambda,
        program_hash: extended.program_hash.clone(),
        program_hash_basic: basic.program_hash.clone(),
    })
}

/// Generates both feature sets, aligns their usable ranges so the test rows
/// coincide, fits ridge on each, and compares.
pub fn run_comparison(
    panel: &Panel,
    targets: &Panel,
    basic_program: &FeatureProgram,
    extended_program: &FeatureProgram,
    split: f64,
    lambda: f64,
) -> Result<CompareReport> {
    let (basic_matrix, _) = generate(panel, basic_program)?;
    let (ext_matrix, _) = generate(panel, extended_program)?;
    let common_start = basic_matrix.max_warmup().max(ext_matrix.max_warmup());
    let basic_table =
        build_table_with(panel, &basic_matrix, targets, split, Some(common_start))?;
    let ext_table = build_table_with(panel, &ext_matrix, targets, split, Some(common_start))?;
    let basic = evaluate_table(&basic_table, lambda, &basic_matrix.program_hash)?;
    let extended = evaluate_table(&ext_table, lambda, &ext_matrix.program_hash)?;
    compare(&basic, &extended, lambda)
}

// --- Synthetic dataset ----------------------------------------------------

/// Which rolled-up statistic of the hidden base series forms the prediction
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTarget {
    /// Rolling population standard deviation over the given lookback.
    RollingStd(usize),
    /// Windowed exponential moving average over the given lookback.
    Ewm(usize),
}

impl SyntheticTarget {
    fn lookback(self) -> usize {
        match self {
            SyntheticTarget::RollingStd(w) | SyntheticTarget::Ewm(w) => w,
        }
    }

    fn stat(self) -> WindowStat {
        match self {
            SyntheticTarget::RollingStd(_) => WindowStat::Std,
            SyntheticTarget::Ewm(_) => WindowStat::Ewm,
        }
    }
}

impl std::str::FromStr for SyntheticTarget {
    type Err = Error;

    /// Accepts `wstd`, `ewm`, `wstd:12`, `ewm:5`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, w) = match s.split_once(':') {
            Some((kind, w)) => {
                let w: usize = w
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad target lookback in `{s}`")))?;
                (kind, w)
            }
            None => (s, 7),
        };
        if w == 0 {
            return Err(Error::Parameter("target lookback must be >= 1".into()));
        }
        match kind {
            "wstd" => Ok(SyntheticTarget::RollingStd(w)),
            "ewm" => Ok(SyntheticTarget::Ewm(w)),
            other => Err(Error::Parameter(format!(
                "unknown synthetic target `{other}` (expected wstd or ewm)"
            ))),
        }
    }
}

/// A seeded synthetic regression problem.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// Observed inputs: a mixture of order-0/1/2 transforms of the base.
    pub inputs: Panel,
    /// Target series; the harness predicts `targets[t+1]` from inputs at t.
    pub targets: Panel,
    /// The hidden base panel the other two derive from.
    pub base: Panel,
}

/// Default dynamics for the synthetic dataset: a ring of pairwise couplings
/// plus diagonal momentum couplings, so alignment clusters drift and local
/// trendiness (and hence windowed dispersion) is persistent.
pub fn default_synthetic_params(n: usize) -> SpinGasParams {
    let mut p = SpinGasParams::zero(n);
    if n > 1 {
        for i in 0..n {
            let right = (i + 1) % n;
            p.j[i][right] = 0.3;
            p.j[right][i] = 0.3;
        }
    }
    for i in 0..n {
        p.g1[i][i] = 0.5;
    }
    p
}

/// Builds the synthetic dataset:
///
/// * base: a spin-gas panel simulated from `params` (default ring
///   couplings);
/// * inputs: variate i is `wmean(base, 5)` when i % 3 == 0, the first
///   difference of base when i % 3 == 1, and the second difference when
///   i % 3 == 2;
/// * targets: the chosen rolling statistic of base.
///
/// Leading samples consumed by the transforms are trimmed so the emitted
/// panels have no missing values. Identical seeds give identical datasets.
pub fn make_synthetic(
    seed: u64,
    n: usize,
    steps: usize,
    params: Option<SpinGasParams>,
    target: SyntheticTarget,
) -> Result<SyntheticDataset> {
    if steps < 2 {
        return Err(Error::Parameter("steps must be >= 2".into()));
    }
    let params = params.unwrap_or_else(|| default_synthetic_params(n));
    if params.n != n {
        return Err(Error::Shape(format!(
            "params are for {} spins, requested {n}",
            params.n
        )));
    }
    let lead = 4usize.max(target.lookback() - 1).max(2);
    let sim_steps = steps + lead - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = simulate_panel(&mut rng, &params, &vec![0.0; n], sim_steps, None)?;

    let mut input_rows = Vec::with_capacity(n);
    let mut target_rows = Vec::with_capacity(n);
    let mut base_rows = Vec::with_capacity(n);
    for i in 0..n {
        let raw = FeatureSeries::from_raw(base.variate(i));
        let input = match i % 3 {
            0 => ops::window(&raw, 5, WindowStat::Mean)?,
            1 => ops::difference(&raw, &ops::shift(&raw, 1)?, 1)?,
            _ => {
                let d1 = ops::difference(&raw, &ops::shift(&raw, 1)?, 1)?;
                ops::difference(&d1, &ops::shift(&d1, 1)?, 1)?
            }
        };
        let tgt = ops::window(&raw, target.lookback(), target.stat())?;
        input_rows.push(slice_defined(&input.values, lead, steps)?);
        target_rows.push(slice_defined(&tgt.values, lead, steps)?);
        base_rows.push(slice_defined(&raw.values, lead, steps)?);
    }
    Ok(SyntheticDataset {
        inputs: Panel::new(input_rows, None)?,
        targets: Panel::new(target_rows, None)?,
        base: Panel::new(base_rows, None)?,
    })
}

fn slice_defined(values: &[Option<f64>], from: usize, len: usize) -> Result<Vec<f64>> {
    values[from..from + len]
        .iter()
        .map(|v| v.ok_or_else(|| Error::Protocol("unexpected missing sample in synthetic".into())))
        .collect()
}

// --- Resemblance scoring ---------------------------------------------------

/// Direct-loop implementations of the three hand-crafted features. These are
/// deliberately independent of the operator kernels: they are the reference
/// the programmed features are scored against.
#[allow(clippy::needless_range_loop)]
pub fn hand_crafted(which: Resemblance, x: &[Option<f64>], dtau: usize) -> Vec<Option<f64>> {
    let t_len = x.len();
    let mut out = vec![None; t_len];
    match which {
        Resemblance::Mom => {
            for t in dtau..t_len {
                if let (Some(now), Some(then)) = (x[t], x[t - dtau]) {
                    if then != 0.0 {
                        out[t] = Some((now - then) / then);
                    }
                }
            }
        }
        Resemblance::Bias => {
            for t in (dtau - 1)..t_len {
                let Some(now) = x[t] else { continue };
                if let Some(sma) = window_values(x, t, dtau).map(|w| {
                    let mut s = 0.0;
                    for v in w {
                        s += v;
                    }
                    s / dtau as f64
                }) {
                    if sma != 0.0 {
                        out[t] = Some((now - sma) / sma);
                    }
                }
            }
        }
        Resemblance::AbsEnergy => {
            for t in (dtau - 1)..t_len {
                if let Some(w) = window_values(x, t, dtau) {
                    let mut s = 0.0;
                    for v in w {
                        s += v * v;
                    }
                    out[t] = Some(s);
                }
            }
        }
    }
    out
}

/// The trailing window ending at t, oldest first, or None when any sample is
/// missing.
fn window_values(x: &[Option<f64>], t: usize, w: usize) -> Option<Vec<f64>> {
    x[t + 1 - w..=t].iter().copied().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ResembleReport {
    pub which: String,
    pub dtau: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// None when the reference is constant (e.g. bias with dtau 1 is
    /// identically zero); equality is then carried by the error bounds.
    pub r2: Option<f64>,
    pub pearson: Option<f64>,
    pub n_compared: usize,
}

/// Runs the customization program for `which` over the panel and scores its
/// named output against the hand-crafted reference, pooled over variates at
/// every point where both are defined.
pub fn resemble_report(panel: &Panel, which: Resemblance, dtau: usize) -> Result<ResembleReport> {
    let program = resemblance_program(which, dtau)?;
    let (matrix, _) = generate(panel, &program)?;
    let mut programmed = Vec::new();
    let mut reference = Vec::new();
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for v in 0..panel.n_variates() {
        let feature = matrix.features[v]
            .iter()
            .find(|f| f.name == which.feature_name())
            .ok_or_else(|| Error::Program("resemblance output feature missing".into()))?;
        let oracle = hand_crafted(which, panel.variate(v), dtau);
        for (a, b) in feature.values.iter().zip(&oracle) {
            if let (Some(a), Some(b)) = (a, b) {
                let abs = (a - b).abs();
                let rel = if *b != 0.0 { abs / b.abs() } else { abs };
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(rel);
                programmed.push(*a);
                reference.push(*b);
            }
        }
    }
    if reference.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: reference.len() });
    }
    let degenerate = reference.iter().all(|&b| b == reference[0]);
    let (r2_score, pearson_score) = if degenerate {
        (None, None)
    } else {
        (Some(r2(&reference, &programmed)?), Some(pearson(&reference, &programmed)?))
    };
    Ok(ResembleReport {
        which: which.feature_name().to_string(),
        dtau,
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        r2: r2_score,
        pearson: pearson_score,
        n_compared: reference.len(),
    })
}
