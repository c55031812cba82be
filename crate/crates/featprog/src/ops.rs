//! The operator kernels: Difference, Window, Shift plus the pointwise
//! helpers (ratio, square).
//!
//! All operators are pure functions over [`FeatureSeries`]. Each one keeps
//! the three bookkeeping fields exact:
//!
//! * values — missing in, missing out; a window needs all of its samples;
//! * warmup — computed analytically (shift adds k, a window of lookback w
//!   adds w-1, pointwise ops take the max of their inputs), never by
//!   scanning for missing samples;
//! * order — only the difference operator upgrades it (max of input orders
//!   plus one); window, shift, ratio and square preserve it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::FeatureSeries;

/// Summary statistic applied by the window operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowStat {
    Mean,
    Max,
    Min,
    Sum,
    /// Population standard deviation (divisor = window length).
    Std,
    /// Exponentially weighted mean with alpha = 2/(w+1); weights
    /// (1-alpha)^lag over the window, normalized to sum to one.
    Ewm,
}

impl WindowStat {
    /// The function name used in expression strings.
    pub fn func_name(self) -> &'static str {
        match self {
            WindowStat::Mean => "wmean",
            WindowStat::Max => "wmax",
            WindowStat::Min => "wmin",
            WindowStat::Sum => "wsum",
            WindowStat::Std => "wstd",
            WindowStat::Ewm => "ewm",
        }
    }

    pub fn from_func_name(name: &str) -> Option<Self> {
        Some(match name {
            "wmean" => WindowStat::Mean,
            "wmax" => WindowStat::Max,
            "wmin" => WindowStat::Min,
            "wsum" => WindowStat::Sum,
            "wstd" => WindowStat::Std,
            "ewm" => WindowStat::Ewm,
            _ => return None,
        })
    }

    pub const ALL: [WindowStat; 6] = [
        WindowStat::Mean,
        WindowStat::Max,
        WindowStat::Min,
        WindowStat::Sum,
        WindowStat::Std,
        WindowStat::Ewm,
    ];

    /// Applies the statistic to one complete window, ordered oldest first.
    pub fn apply(self, window: &[f64]) -> f64 {
        let w = window.len();
        debug_assert!(w >= 1);
        match self {
            WindowStat::Mean => window.iter().sum::<f64>() / w as f64,
            WindowStat::Max => window.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            WindowStat::Min => window.iter().copied().fold(f64::INFINITY, f64::min),
            WindowStat::Sum => window.iter().sum::<f64>(),
            WindowStat::Std => {
                let mean = window.iter().sum::<f64>() / w as f64;
                let var = window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w as f64;
                var.sqrt()
            }
            WindowStat::Ewm => {
                let alpha = 2.0 / (w as f64 + 1.0);
                let mut num = 0.0;
                let mut den = 0.0;
                for (idx, x) in window.iter().enumerate() {
                    let lag = (w - 1 - idx) as f64;
                    let weight = (1.0 - alpha).powf(lag);
                    num += weight * x;
                    den += weight;
                }
                num / den
            }
        }
    }
}

/// `out[t] = s[t-k]`; warmup grows by k, order unchanged.
pub fn shift(s: &FeatureSeries, k: usize) -> Result<FeatureSeries> {
    if k == 0 {
        return Err(Error::Parameter(
            "shift amount must be >= 1 (zero or negative shifts leak the future)".into(),
        ));
    }
    let t_len = s.values.len();
    if k >= t_len {
        return Err(Error::EmptyOutput(format!(
            "shift by {k} leaves no defined samples in a series of length {t_len}"
        )));
    }
    let mut values = vec![None; t_len];
    values[k..].copy_from_slice(&s.values[..t_len - k]);
    let lineage = format!("shift({},{k})", s.lineage);
    Ok(FeatureSeries {
        name: lineage.clone(),
        order: s.order,
        warmup: s.warmup + k,
        lineage,
        values,
    })
}

/// Rolling summary statistic over a lookback of w samples; the output at t
/// is defined only when all of `s[t-w+1..=t]` are present. Warmup grows by
/// w-1, order unchanged.
pub fn window(s: &FeatureSeries, w: usize, stat: WindowStat) -> Result<FeatureSeries> {
    if w == 0 {
        return Err(Error::Parameter("window lookback must be >= 1".into()));
    }
    let t_len = s.values.len();
    let mut values = vec![None; t_len];
    let mut buf = Vec::with_capacity(w.min(t_len));
    if w <= t_len {
        for (offset, win) in s.values.windows(w).enumerate() {
            buf.clear();
            let mut complete = true;
            for v in win {
                match v {
                    Some(x) => buf.push(*x),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                values[offset + w - 1] = Some(stat.apply(&buf));
            }
        }
    }
    let lineage = format!("{}({},{w})", stat.func_name(), s.lineage);
    Ok(FeatureSeries {
        name: lineage.clone(),
        order: s.order,
        warmup: s.warmup + w - 1,
        lineage,
        values,
    })
}

/// The order-upgrading operator: smooth both inputs with a rolling mean of
/// `smoothing` samples (1 = no smoothing), then subtract. The result's order
/// is max of the input orders plus one.
pub fn difference(
    a: &FeatureSeries,
    b: &FeatureSeries,
    smoothing: usize,
) -> Result<FeatureSeries> {
    if smoothing == 0 {
        return Err(Error::Parameter("difference smoothing must be >= 1".into()));
    }
    if a.values.len() != b.values.len() {
        return Err(Error::Shape(format!(
            "difference inputs have lengths {} and {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let sa = window(a, smoothing, WindowStat::Mean)?;
    let sb = window(b, smoothing, WindowStat::Mean)?;
    let values = sa
        .values
        .iter()
        .zip(&sb.values)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        })
        .collect();
    let lineage = if smoothing == 1 {
        format!("diff({},{})", a.lineage, b.lineage)
    } else {
        format!("diff({},{},{smoothing})", a.lineage, b.lineage)
    };
    Ok(FeatureSeries {
        name: lineage.clone(),
        order: a.order.max(b.order) + 1,
        warmup: a.warmup.max(b.warmup) + smoothing - 1,
        lineage,
        values,
    })
}

/// Pointwise `a/b`, missing wherever b is exactly zero. Order is the max of
/// the input orders.
pub fn ratio(a: &FeatureSeries, b: &FeatureSeries) -> Result<FeatureSeries> {
    if a.values.len() != b.values.len() {
        return Err(Error::Shape(format!(
            "ratio inputs have lengths {} and {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) if *y != 0.0 => Some(x / y),
            _ => None,
        })
        .collect();
    let lineage = format!("ratio({},{})", a.lineage, b.lineage);
    Ok(FeatureSeries {
        name: lineage.clone(),
        order: a.order.max(b.order),
        warmup: a.warmup.max(b.warmup),
        values,
        lineage,
    })
}

/// Pointwise square; order and warmup unchanged.
pub fn square(a: &FeatureSeries) -> FeatureSeries {
    let values = a.values.iter().map(|x| x.map(|x| x * x)).collect();
    let lineage = format!("square({})", a.lineage);
    FeatureSeries {
        name: lineage.clone(),
        order: a.order,
        warmup: a.warmup,
        values,
        lineage,
    }
}
