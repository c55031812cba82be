//! Spin-gas Glauber dynamics: a dynamical Ising model whose effective local
//! field couples to the discrete momentum and acceleration of the spin
//! trajectory.
//!
//! Each spin flips independently per step with
//!
//! ```text
//! P(sigma = +1 | field) = exp(field) / (2 cosh(field))
//! field_i = sum_j J_ij sigma_j + h_i + sum_j G1_ij p_j + sum_j G2_ij a_j
//! p_j = c (sigma_j - sigma'_j) / dt          (momentum)
//! a_j = c (sigma_j - 2 sigma'_j + sigma''_j) / dt^2   (acceleration)
//! ```
//!
//! where `sigma'`, `sigma''` are the spin vectors one and two steps back.
//! A panel is the cumulative path-sum of increments `c * sigma` per step.
//! Besides sampling, this module enumerates exact path probabilities over L
//! steps and the exact pairwise joint distribution over two consecutive
//! slices for validating the per-node conditionals at small N.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Panel;

/// Hard bound on `N * (L - 1)` for path enumeration (2^20 chain states).
pub const PATH_ENUM_BOUND: u32 = 20;
/// Hard bound on N for joint-table enumeration (2^{2N} configurations).
pub const JOINT_ENUM_BOUND: usize = 6;

pub const DEFAULT_RESCALE: f64 = 0.1;
pub const DEFAULT_DT: f64 = 1.0;

fn default_c() -> f64 {
    DEFAULT_RESCALE
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

/// Couplings and step parameters of the dynamics. The inverse temperature is
/// fixed to 1 and absorbed into the couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinGasParams {
    pub n: usize,
    /// Symmetric pairwise couplings with zero diagonal.
    #[serde(rename = "J")]
    pub j: Vec<Vec<f64>>,
    /// External field.
    pub h: Vec<f64>,
    /// Momentum couplings.
    #[serde(rename = "G1")]
    pub g1: Vec<Vec<f64>>,
    /// Acceleration couplings.
    #[serde(rename = "G2")]
    pub g2: Vec<Vec<f64>>,
    /// Rescale factor on increments; keep well below 1 for near-continuous
    /// paths.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Time step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Optional third-order momentum couplings: adds
    /// `sum_{m,n} G1_quad[i][m][n] p_m p_n` to spin i's field.
    #[serde(rename = "G1_quad", default, skip_serializing_if = "Option::is_none")]
    pub g1_quad: Option<Vec<Vec<Vec<f64>>>>,
    /// Optional third-order acceleration couplings, analogous to `G1_quad`.
    #[serde(rename = "G2_quad", default, skip_serializing_if = "Option::is_none")]
    pub g2_quad: Option<Vec<Vec<Vec<f64>>>>,
    /// Optional step-indexed overrides making (J, h) time-dependent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScheduleEntry>>,
}

/// From `step` onward, replace J and/or h. Entries must be sorted by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub step: usize,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
}

impl SpinGasParams {
    /// Zero couplings: every spin is an independent fair coin.
    pub fn zero(n: usize) -> Self {
        SpinGasParams {
            n,
            j: vec![vec![0.0; n]; n],
            h: vec![0.0; n],
            g1: vec![vec![0.0; n]; n],
            g2: vec![vec![0.0; n]; n],
            c: DEFAULT_RESCALE,
            dt: DEFAULT_DT,
            g1_quad: None,
            g2_quad: None,
            schedule: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("spin count must be >= 1".into()));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::Parameter("rescale factor c must be non-negative".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter("time step dt must be positive".into()));
        }
        check_matrix("J", &self.j, self.n)?;
        check_matrix("G1", &self.g1, self.n)?;
        check_matrix("G2", &self.g2, self.n)?;
        if self.h.len() != self.n {
            return Err(Error::Shape(format!(
                "h has length {}, expected {}",
                self.h.len(),
                self.n
            )));
        }
        if self.h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("h entries must be finite".into()));
        }
        for i in 0..self.n {
            if self.j[i][i] != 0.0 {
                return Err(Error::Parameter(format!("J must have zero diagonal (J[{i}][{i}])")));
            }
            for k in 0..self.n {
                if self.j[i][k] != self.j[k][i] {
                    return Err(Error::Parameter(format!(
                        "J must be symmetric (J[{i}][{k}] != J[{k}][{i}])"
                    )));
                }
            }
        }
        for (name, tensor) in [("G1_quad", &self.g1_quad), ("G2_quad", &self.g2_quad)] {
            if let Some(t) = tensor {
                if t.len() != self.n {
                    return Err(Error::Shape(format!("{name} must be {0}x{0}x{0}", self.n)));
                }
                for plane in t {
                    check_matrix(name, plane, self.n)?;
                }
            }
        }
        if let Some(entries) = &self.schedule {
            for (idx, e) in entries.iter().enumerate() {
                if idx > 0 && entries[idx - 1].step >= e.step {
                    return Err(Error::Parameter("schedule steps must be increasing".into()));
                }
                if let Some(j) = &e.j {
                    check_matrix("schedule J", j, self.n)?;
                }
                if let Some(h) = &e.h {
                    if h.len() != self.n {
                        return Err(Error::Shape("schedule h has wrong length".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Effective (J, h) at a simulation step, honoring the schedule.
    pub fn at_step(&self, step: usize) -> (&[Vec<f64>], &[f64]) {
        let mut j: &[Vec<f64>] = &self.j;
        let mut h: &[f64] = &self.h;
        if let Some(entries) = &self.schedule {
            for e in entries {
                if e.step > step {
                    break;
                }
                if let Some(ej) = &e.j {
                    j = ej;
                }
                if let Some(eh) = &e.h {
                    h = eh;
                }
            }
        }
        (j, h)
    }

    pub fn couplings_zero(&self) -> bool {
        let flat = |m: &[Vec<f64>]| m.iter().flatten().all(|&x| x == 0.0);
        let tensor_zero = |t: &Option<Vec<Vec<Vec<f64>>>>| {
            t.as_ref().is_none_or(|t| t.iter().all(|plane| flat(plane)))
        };
        flat(&self.j)
            && flat(&self.g1)
            && flat(&self.g2)
            && tensor_zero(&self.g1_quad)
            && tensor_zero(&self.g2_quad)
    }
}

fn check_matrix(name: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!("{name} must be {n}x{n}")));
    }
    if m.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Parameter(format!("{name} entries must be finite")));
    }
    Ok(())
}

/// The params file accepted by the CLI: dynamics parameters plus an optional
/// seed and initial history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(flatten)]
    pub params: SpinGasParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<HistoryInit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryInit {
    pub prev: Vec<i8>,
    pub prev2: Vec<i8>,
}

/// The three consecutive spin vectors the local field depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinHistory {
    /// Current spins.
    pub sigma: Vec<i8>,
    /// One step back.
    pub prev: Vec<i8>,
    /// Two steps back.
    pub prev2: Vec<i8>,
}

impl SpinHistory {
    /// All spins up, the default initialization.
    pub fn uniform_up(n: usize) -> Self {
        SpinHistory { sigma: vec![1; n], prev: vec![1; n], prev2: vec![1; n] }
    }

    pub fn new(sigma: Vec<i8>, prev: Vec<i8>, prev2: Vec<i8>) -> Result<Self> {
        for v in [&sigma, &prev, &prev2] {
            if v.len() != sigma.len() {
                return Err(Error::Shape("history vectors must share one length".into()));
            }
            if v.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::Parameter("spins must be +1 or -1".into()));
            }
        }
        Ok(SpinHistory { sigma, prev, prev2 })
    }

    /// Rolls the window forward after a new spin vector is drawn.
    pub fn advance(&mut self, next: Vec<i8>) {
        self.prev2 = std::mem::replace(&mut self.prev, std::mem::take(&mut self.sigma));
        self.sigma = next;
    }

    /// Discrete momentum `c (sigma - prev) / dt`.
    pub fn momentum(&self, c: f64, dt: f64) -> Vec<f64> {
        self.sigma
            .iter()
            .zip(&self.prev)
            .map(|(&s, &p)| c * f64::from(s - p) / dt)
            .collect()
    }

    /// Discrete acceleration `(p_t - p_{t-dt}) / dt`.
    pub fn acceleration(&self, c: f64, dt: f64) -> Vec<f64> {
        self.sigma
            .iter()
            .zip(&self.prev)
            .zip(&self.prev2)
            .map(|((&s, &p), &q)| c * f64::from(s - 2 * p + q) / (dt * dt))
            .collect()
    }
}

/// `P(sigma = +1 | gamma)`; the complement is computed as `1 - p` so the two
/// probabilities sum to one exactly.
pub fn prob_up(gamma: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * gamma).exp())
}

/// `P(sigma | gamma)` for `sigma` in {+1, -1}.
pub fn cond_prob(gamma: f64, sigma: i8) -> f64 {
    let p = prob_up(gamma);
    if sigma > 0 {
        p
    } else {
        1.0 - p
    }
}

/// The effective local field for every spin, using the base (J, h).
pub fn local_field(params: &SpinGasParams, history: &SpinHistory) -> Vec<f64> {
    local_field_at(params, history, &params.j, &params.h)
}

fn local_field_at(
    params: &SpinGasParams,
    history: &SpinHistory,
    j: &[Vec<f64>],
    h: &[f64],
) -> Vec<f64> {
    let p = history.momentum(params.c, params.dt);
    let a = history.acceleration(params.c, params.dt);
    (0..params.n)
        .map(|i| {
            let mut gamma = h[i];
            for k in 0..params.n {
                gamma += j[i][k] * f64::from(history.sigma[k]);
                gamma += params.g1[i][k] * p[k];
                gamma += params.g2[i][k] * a[k];
            }
            if let Some(t) = &params.g1_quad {
                gamma += quad_form(&t[i], &p);
            }
            if let Some(t) = &params.g2_quad {
                gamma += quad_form(&t[i], &a);
            }
            gamma
        })
        .collect()
}

fn quad_form(coeffs: &[Vec<f64>], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (row, &vm) in coeffs.iter().zip(v) {
        for (&c, &vn) in row.iter().zip(v) {
            acc += c * vm * vn;
        }
    }
    acc
}

/// Draws the next spin vector; each spin independently per the conditional.
pub fn step_sample<R: rand::Rng>(
    rng: &mut R,
    params: &SpinGasParams,
    history: &SpinHistory,
) -> Vec<i8> {
    step_sample_at(rng, params, history, &params.j, &params.h)
}

fn step_sample_at<R: rand::Rng>(
    rng: &mut R,
    params: &SpinGasParams,
    history: &SpinHistory,
    j: &[Vec<f64>],
    h: &[f64],
) -> Vec<i8> {
    local_field_at(params, history, j, h)
        .into_iter()
        .map(|gamma| if rng.random::<f64>() < prob_up(gamma) { 1 } else { -1 })
        .collect()
}

/// Simulates `steps` increments, producing a panel of length `steps + 1`
/// starting at `x0`; each variate advances by `c * sigma` per step.
pub fn simulate_panel<R: rand::Rng>(
    rng: &mut R,
    params: &SpinGasParams,
    x0: &[f64],
    steps: usize,
    init: Option<SpinHistory>,
) -> Result<Panel> {
    params.validate()?;
    if steps == 0 {
        return Err(Error::Parameter("steps must be >= 1".into()));
    }
    if x0.len() != params.n {
        return Err(Error::Shape(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            params.n
        )));
    }
    let mut history = match init {
        Some(h) => {
            if h.sigma.len() != params.n {
                return Err(Error::Shape("history length must match spin count".into()));
            }
            h
        }
        None => SpinHistory::uniform_up(params.n),
    };
    let mut x = x0.to_vec();
    let mut rows: Vec<Vec<f64>> = (0..params.n).map(|i| vec![x0[i]]).collect();
    for step in 1..=steps {
        let (j, h) = params.at_step(step);
        let next = step_sample_at(rng, params, &history, j, h);
        for i in 0..params.n {
            x[i] += params.c * f64::from(next[i]);
            rows[i].push(x[i]);
        }
        history.advance(next);
    }
    Panel::new(rows, None)
}

fn config_to_spins(mask: usize, n: usize) -> Vec<i8> {
    (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect()
}

fn spins_to_config(spins: &[i8]) -> usize {
    spins
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &s)| if s > 0 { acc | 1 << i } else { acc })
}

/// One-step transition probability `P(next | history)`: the product over
/// spins of the per-spin conditional.
pub fn one_step_prob(params: &SpinGasParams, history: &SpinHistory, next: &[i8]) -> f64 {
    let gamma = local_field(params, history);
    gamma
        .iter()
        .zip(next)
        .map(|(&g, &s)| cond_prob(g, s))
        .product()
}

/// Exact conditional probability of landing on `end` after `steps` steps
/// from `start`, by exhaustive enumeration of every intermediate
/// configuration, rolling the momentum and acceleration history along each
/// path. The base (J, h) are used throughout.
///
/// `history` supplies the spin vectors one and two steps before `start`.
pub fn path_probability(
    params: &SpinGasParams,
    start: &[i8],
    end: &[i8],
    steps: usize,
    history: (&[i8], &[i8]),
) -> Result<f64> {
    params.validate()?;
    if steps == 0 {
        return Err(Error::Parameter("path length must be >= 1".into()));
    }
    if start.len() != params.n || end.len() != params.n {
        return Err(Error::Shape("start/end must match the spin count".into()));
    }
    let cost = params.n as u32 * (steps as u32 - 1);
    if cost > PATH_ENUM_BOUND {
        return Err(Error::Capacity(format!(
            "path enumeration needs 2^{cost} chain states (bound 2^{PATH_ENUM_BOUND}); \
             reduce N or L"
        )));
    }
    let init = SpinHistory::new(start.to_vec(), history.0.to_vec(), history.1.to_vec())?;
    Ok(path_sum(params, &init, end, steps))
}

fn path_sum(params: &SpinGasParams, history: &SpinHistory, end: &[i8], steps: usize) -> f64 {
    if steps == 1 {
        return one_step_prob(params, history, end);
    }
    let mut total = 0.0;
    for mask in 0..1usize << params.n {
        let mid = config_to_spins(mask, params.n);
        let p = one_step_prob(params, history, &mid);
        if p == 0.0 {
            continue;
        }
        let mut rolled = history.clone();
        rolled.advance(mid);
        total += p * path_sum(params, &rolled, end, steps - 1);
    }
    total
}

/// The exact pairwise joint distribution over `(sigma_t, sigma_{t+dt})`
/// conditioned on a fixed two-step history, enumerated over all `2^{2N}`
/// configurations.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub params: SpinGasParams,
    pub prev: Vec<i8>,
    pub prev2: Vec<i8>,
    /// `table[cur | (next << n)]`, bit i set means spin i is +1.
    pub table: Vec<f64>,
    /// Log-partition of the unnormalized energies.
    pub log_partition: f64,
}

/// Builds the joint model with energy
///
/// ```text
/// E = sum_{i<j} J_ij s_i s_j + sum_i h_i s_i + sum_i s'_i field_i(s, history)
/// ```
///
/// over current spins `s` and next spins `s'`; the derivative terms inside
/// the field are evaluated from `(s, prev, prev2)`.
pub fn build_joint(params: &SpinGasParams, prev: &[i8], prev2: &[i8]) -> Result<JointModel> {
    params.validate()?;
    let n = params.n;
    if n > JOINT_ENUM_BOUND {
        return Err(Error::Capacity(format!(
            "joint enumeration is bounded at N = {JOINT_ENUM_BOUND}, got {n}"
        )));
    }
    if prev.len() != n || prev2.len() != n {
        return Err(Error::Shape("history length must match spin count".into()));
    }
    let size = 1usize << (2 * n);
    let mut energy = vec![0.0; size];
    for cur_mask in 0..1usize << n {
        let cur = config_to_spins(cur_mask, n);
        let mut e_cur = 0.0;
        for i in 0..n {
            e_cur += params.h[i] * f64::from(cur[i]);
            for k in (i + 1)..n {
                e_cur += params.j[i][k] * f64::from(cur[i]) * f64::from(cur[k]);
            }
        }
        let hist = SpinHistory::new(cur.clone(), prev.to_vec(), prev2.to_vec())?;
        let gamma = local_field(params, &hist);
        for next_mask in 0..1usize << n {
            let mut e = e_cur;
            for (i, &g) in gamma.iter().enumerate() {
                let s_next: f64 = if next_mask >> i & 1 == 1 { 1.0 } else { -1.0 };
                e += s_next * g;
            }
            energy[cur_mask | (next_mask << n)] = e;
        }
    }
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = energy.iter().map(|&e| (e - max).exp()).sum();
    let log_partition = max + sum_exp.ln();
    let table: Vec<f64> = energy.iter().map(|&e| (e - log_partition).exp()).collect();
    Ok(JointModel {
        params: params.clone(),
        prev: prev.to_vec(),
        prev2: prev2.to_vec(),
        table,
        log_partition,
    })
}

impl JointModel {
    pub fn n(&self) -> usize {
        self.params.n
    }

    /// Probability of one full `(current, next)` configuration.
    pub fn prob(&self, current: &[i8], next: &[i8]) -> f64 {
        self.table[spins_to_config(current) | (spins_to_config(next) << self.n())]
    }

    /// Sum of the table; 1 up to float rounding.
    pub fn total_mass(&self) -> f64 {
        self.table.iter().sum()
    }

    /// Conditional distribution `P(next | current)` extracted from the
    /// table, as a vector over next-configurations.
    pub fn conditional_next(&self, current: &[i8]) -> Vec<f64> {
        let n = self.n();
        let cur_mask = spins_to_config(current);
        let slice: Vec<f64> =
            (0..1usize << n).map(|m| self.table[cur_mask | (m << n)]).collect();
        let total: f64 = slice.iter().sum();
        slice.into_iter().map(|p| p / total).collect()
    }
}

/// Deviations between conditionals extracted from the joint table and their
/// closed forms.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalReport {
    /// Max |table conditional - sigmoid(local field)| over next-slice nodes;
    /// this is the asserted check.
    pub max_dev_next_slice: f64,
    /// Max deviation of current-slice node conditionals from the field-only
    /// sigmoid with the in-slice couplings. Diagnostic unless all couplings
    /// are zero, in which case it must also vanish.
    pub max_dev_current_slice: f64,
    /// True when J, G1 and G2 are all zero.
    pub field_only: bool,
}

/// Compares every node-conditional of the joint table against its closed
/// form: next-slice nodes against the sampling conditional, current-slice
/// nodes against the in-slice Ising field sigmoid.
pub fn check_node_conditionals(joint: &JointModel) -> ConditionalReport {
    let n = joint.n();
    let params = &joint.params;
    let mut max_next: f64 = 0.0;
    let mut max_cur: f64 = 0.0;

    for q in 0..2 * n {
        let bit = 1usize << q;
        for mask in 0..1usize << (2 * n) {
            if mask & bit != 0 {
                continue;
            }
            let p_dn = joint.table[mask];
            let p_up = joint.table[mask | bit];
            let cond_up = p_up / (p_up + p_dn);

            let closed = if q >= n {
                // next-slice node: the field is a function of the current
                // slice and the fixed history
                let cur = config_to_spins(mask & ((1 << n) - 1), n);
                let hist = SpinHistory {
                    sigma: cur,
                    prev: joint.prev.clone(),
                    prev2: joint.prev2.clone(),
                };
                prob_up(local_field(params, &hist)[q - n])
            } else {
                // current-slice node: field-only reference with in-slice J
                let cur = config_to_spins(mask & ((1 << n) - 1), n);
                let mut gamma = params.h[q];
                for (k, &s) in cur.iter().enumerate() {
                    if k != q {
                        gamma += params.j[q][k] * f64::from(s);
                    }
                }
                prob_up(gamma)
            };
            let dev = (cond_up - closed).abs();
            if q >= n {
                max_next = max_next.max(dev);
            } else {
                max_cur = max_cur.max(dev);
            }
        }
    }
    ConditionalReport {
        max_dev_next_slice: max_next,
        max_dev_current_slice: max_cur,
        field_only: params.couplings_zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, n: usize, zero_g: bool) -> SpinGasParams {
        let mut p = SpinGasParams::zero(n);
        for i in 0..n {
            p.h[i] = rng.random::<f64>() - 0.5;
            for k in (i + 1)..n {
                let j = rng.random::<f64>() - 0.5;
                p.j[i][k] = j;
                p.j[k][i] = j;
            }
            if !zero_g {
                for k in 0..n {
                    p.g1[i][k] = rng.random::<f64>() - 0.5;
                    p.g2[i][k] = rng.random::<f64>() - 0.5;
                }
            }
        }
        p.c = 0.5;
        p
    }

    #[test]
    fn local_field_zero_case() {
        let p = SpinGasParams::zero(3);
        let hist = SpinHistory::uniform_up(3);
        assert_eq!(local_field(&p, &hist), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn local_field_pure_external() {
        let mut p = SpinGasParams::zero(1);
        p.h[0] = 1.0;
        for hist in [
            SpinHistory::uniform_up(1),
            SpinHistory::new(vec![-1], vec![1], vec![-1]).unwrap(),
        ] {
            assert_eq!(local_field(&p, &hist), vec![1.0]);
        }
    }

    #[test]
    fn local_field_momentum_term() {
        // p = c (sigma - prev) / dt = (1 - (-1)) / 1 = 2, so the field is 2g
        let g = 0.35;
        let mut p = SpinGasParams::zero(1);
        p.c = 1.0;
        p.dt = 1.0;
        p.g1[0][0] = g;
        let hist = SpinHistory::new(vec![1], vec![-1], vec![-1]).unwrap();
        assert!((local_field(&p, &hist)[0] - 2.0 * g).abs() < 1e-15);
    }

    #[test]
    fn conditional_probabilities_sum_to_one_exactly() {
        for gamma in [-500.0, -2.0, -0.1, 0.0, 0.3, 1.0, 700.0] {
            let up = cond_prob(gamma, 1);
            let dn = cond_prob(gamma, -1);
            assert_eq!(up + dn, 1.0, "gamma = {gamma}");
        }
        assert_eq!(prob_up(0.0), 0.5);
        // closed form e^g / (e^g + e^-g) against the shared-denominator path
        let g: f64 = 1.0;
        let direct = g.exp() / (g.exp() + (-g).exp());
        assert!((prob_up(g) - direct).abs() < 1e-15);
        assert!((prob_up(1.0) - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = random_params(&mut ChaCha8Rng::seed_from_u64(9), 3, false);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hist = SpinHistory::uniform_up(3);
            let mut draws = Vec::new();
            for _ in 0..50 {
                let next = step_sample(&mut rng, &p, &hist);
                draws.push(next.clone());
                hist.advance(next);
            }
            draws
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn zero_rescale_freezes_the_panel() {
        let mut p = SpinGasParams::zero(2);
        p.c = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let panel = simulate_panel(&mut rng, &p, &[1.5, -3.0], 5, None).unwrap();
        assert!(panel.variate(0).iter().all(|&x| x == Some(1.5)));
        assert!(panel.variate(1).iter().all(|&x| x == Some(-3.0)));
    }

    #[test]
    fn strong_field_locks_increments() {
        // h = 20 gives P(+1) within 1e-17 of 1, so every increment is +c
        let mut p = SpinGasParams::zero(1);
        p.h[0] = 20.0;
        p.c = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let panel = simulate_panel(&mut rng, &p, &[2.0], 100, None).unwrap();
        let xs = panel.variate(0);
        assert_eq!(xs[100], Some(2.0 + 100.0));
    }

    #[test]
    fn fair_coin_increment_mean_within_4_sigma() {
        let mut p = SpinGasParams::zero(1);
        p.c = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps = 100_000;
        let panel = simulate_panel(&mut rng, &p, &[0.0], steps, None).unwrap();
        let xs = panel.variate(0);
        let mean_inc = xs[steps].unwrap() / steps as f64;
        let four_sigma = 4.0 / (steps as f64).sqrt();
        assert!(mean_inc.abs() < four_sigma, "{mean_inc} vs {four_sigma}");
    }

    #[test]
    fn schedule_switches_parameters() {
        let mut p = SpinGasParams::zero(1);
        p.h[0] = -20.0;
        p.c = 1.0;
        p.schedule = Some(vec![ScheduleEntry { step: 51, j: None, h: Some(vec![20.0]) }]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let panel = simulate_panel(&mut rng, &p, &[0.0], 100, None).unwrap();
        let xs = panel.variate(0);
        assert_eq!(xs[50], Some(-50.0));
        assert_eq!(xs[100], Some(0.0));
    }

    #[test]
    fn quadratic_momentum_coupling() {
        // p = 2, so the tensor term contributes q * p^2 = 4q
        let q = 0.21;
        let mut p = SpinGasParams::zero(1);
        p.c = 1.0;
        p.dt = 1.0;
        p.g1_quad = Some(vec![vec![vec![q]]]);
        let hist = SpinHistory::new(vec![1], vec![-1], vec![-1]).unwrap();
        assert!((local_field(&p, &hist)[0] - 4.0 * q).abs() < 1e-15);
        assert!(!p.couplings_zero());

        // the joint-table conditionals still match the sampler with the
        // tensor in play
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut p2 = random_params(&mut rng, 2, false);
        p2.g1_quad = Some(vec![vec![vec![0.3, -0.1], vec![0.0, 0.2]]; 2]);
        p2.g2_quad = Some(vec![vec![vec![-0.2, 0.1], vec![0.1, 0.0]]; 2]);
        let joint = build_joint(&p2, &[1, -1], &[-1, -1]).unwrap();
        let report = check_node_conditionals(&joint);
        assert!(report.max_dev_next_slice < 1e-10, "{report:?}");
    }

    #[test]
    fn single_step_path_is_the_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let p = random_params(&mut rng, 3, false);
        let start = [1i8, -1, 1];
        let prev = [-1i8, -1, 1];
        let prev2 = [1i8, 1, 1];
        let hist = SpinHistory::new(start.to_vec(), prev.to_vec(), prev2.to_vec()).unwrap();
        for end in [[1i8, 1, 1], [-1, 1, -1], [-1, -1, -1]] {
            let direct = one_step_prob(&p, &hist, &end);
            let path = path_probability(&p, &start, &end, 1, (&prev, &prev2)).unwrap();
            assert_eq!(path, direct);
        }
    }

    #[test]
    fn path_probability_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let params = random_params(&mut rng, 1, false);
        let start = [1i8];
        let prev = [-1i8];
        let prev2 = [1i8];
        let steps = 2;
        let trials = 100_000usize;
        let mut hits = [0usize; 2];
        let mut sampler = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..trials {
            let mut hist =
                SpinHistory::new(start.to_vec(), prev.to_vec(), prev2.to_vec()).unwrap();
            for _ in 0..steps {
                let next = step_sample(&mut sampler, &params, &hist);
                hist.advance(next);
            }
            hits[usize::from(hist.sigma[0] == 1)] += 1;
        }
        for (idx, end) in [[-1i8], [1i8]].iter().enumerate() {
            let exact = path_probability(&params, &start, end, steps, (&prev, &prev2)).unwrap();
            let freq = hits[idx] as f64 / trials as f64;
            let four_se = 4.0 * (exact * (1.0 - exact) / trials as f64).sqrt();
            assert!(
                (freq - exact).abs() < four_se,
                "end {end:?}: freq {freq} vs exact {exact} (4se {four_se})"
            );
        }
    }

    #[test]
    fn path_probability_single_spin_symmetric() {
        let p = SpinGasParams::zero(1);
        let up = [1i8];
        let dn = [-1i8];
        for (s, e) in [(&up, &up), (&up, &dn), (&dn, &up), (&dn, &dn)] {
            let prob = path_probability(&p, s.as_slice(), e.as_slice(), 2, (&[1], &[1])).unwrap();
            assert!((prob - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn path_probability_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_params(&mut rng, 2, false);
        let start = [1i8, -1];
        let prev = [1i8, 1];
        let prev2 = [-1i8, 1];
        let mut total = 0.0;
        for mask in 0..4usize {
            let end = config_to_spins(mask, 2);
            total += path_probability(&p, &start, &end, 3, (&prev, &prev2)).unwrap();
        }
        assert!((total - 1.0).abs() < 1e-10, "total = {total}");
    }

    #[test]
    fn capacity_bound_enforced() {
        let p = SpinGasParams::zero(5);
        let s = vec![1i8; 5];
        assert!(matches!(
            path_probability(&p, &s, &s, 6, (&s, &s)),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            build_joint(&SpinGasParams::zero(7), &[1; 7], &[1; 7]),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn joint_zero_couplings_is_uniform() {
        let p = SpinGasParams::zero(2);
        let joint = build_joint(&p, &[1, 1], &[1, 1]).unwrap();
        let expected = 1.0 / 16.0;
        for v in &joint.table {
            assert!((v - expected).abs() < 1e-14);
        }
        // log-partition of 2^{2N} zero energies
        assert!((joint.log_partition - (4.0 * std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((joint.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_table_normalizes_for_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_params(&mut rng, 3, false);
        let joint = build_joint(&p, &[1, -1, 1], &[-1, 1, 1]).unwrap();
        assert!((joint.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn joint_conditional_next_matches_sampler_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let p = random_params(&mut rng, 2, false);
        let prev = [1i8, -1];
        let prev2 = [-1i8, -1];
        let joint = build_joint(&p, &prev, &prev2).unwrap();
        for cur_mask in 0..4usize {
            let cur = config_to_spins(cur_mask, 2);
            let cond = joint.conditional_next(&cur);
            let hist = SpinHistory::new(cur.clone(), prev.to_vec(), prev2.to_vec()).unwrap();
            for next_mask in 0..4usize {
                let next = config_to_spins(next_mask, 2);
                let direct = one_step_prob(&p, &hist, &next);
                assert!((cond[next_mask] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn node_conditionals_match_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // general couplings: the next-slice check must hold
        let p = random_params(&mut rng, 2, false);
        let joint = build_joint(&p, &[1, 1], &[-1, 1]).unwrap();
        let report = check_node_conditionals(&joint);
        assert!(report.max_dev_next_slice < 1e-10, "{report:?}");
        assert!(!report.field_only);

        // field-only: both slices reduce to the h-sigmoid
        let mut p0 = SpinGasParams::zero(3);
        for i in 0..3 {
            p0.h[i] = rng.random::<f64>() - 0.5;
        }
        let joint0 = build_joint(&p0, &[1, -1, 1], &[1, 1, -1]).unwrap();
        let report0 = check_node_conditionals(&joint0);
        assert!(report0.field_only);
        assert!(report0.max_dev_next_slice < 1e-10);
        assert!(report0.max_dev_current_slice < 1e-10, "{report0:?}");
    }

    #[test]
    fn params_json_round_trip() {
        let mut p = SpinGasParams::zero(2);
        p.h = vec![0.5, -0.25];
        p.j[0][1] = 0.125;
        p.j[1][0] = 0.125;
        let file = ParamsFile { params: p.clone(), seed: Some(9), history: None };
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"J\""));
        assert!(text.contains("\"G1\""));
        let back: ParamsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.seed, Some(9));
    }

    #[test]
    fn asymmetric_j_rejected() {
        let mut p = SpinGasParams::zero(2);
        p.j[0][1] = 0.5;
        assert!(matches!(p.validate(), Err(Error::Parameter(_))));
    }
}
