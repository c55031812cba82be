//! Property suites for the crate-wide invariants.

use proptest::prelude::*;

use featprog::expr::parse_expr;
use featprog::ops;
use featprog::series::{FeatureSeries, Panel};
use featprog::spingas::{cond_prob, prob_up};
use featprog::{Expr, WindowStat};

fn stat_strategy() -> impl Strategy<Value = WindowStat> {
    prop::sample::select(WindowStat::ALL.to_vec())
}

/// Expression trees over `raw` (no named references).
fn expr_strategy(include_ratio: bool) -> impl Strategy<Value = Expr> {
    let leaf = Just(Expr::Raw).boxed();
    leaf.prop_recursive(4, 24, 2, move |inner| {
        let shift = (inner.clone(), 1usize..4).prop_map(|(e, k)| e.shift(k));
        let window =
            (inner.clone(), 1usize..6, stat_strategy()).prop_map(|(e, w, s)| e.window(w, s));
        let diff = (inner.clone(), inner.clone(), 1usize..3)
            .prop_map(|(a, b, s)| Expr::diff_smoothed(a, b, s));
        let square = inner.clone().prop_map(Expr::square);
        if include_ratio {
            let ratio = (inner.clone(), inner).prop_map(|(a, b)| Expr::ratio(a, b));
            prop_oneof![shift, window, diff, square, ratio].boxed()
        } else {
            prop_oneof![shift, window, diff, square].boxed()
        }
    })
}

proptest! {
    /// Canonical printing round-trips through the parser to an equal tree.
    #[test]
    fn expr_print_parse_round_trip(expr in expr_strategy(true)) {
        let printed = expr.to_string();
        let parsed = parse_expr(&printed).unwrap();
        prop_assert_eq!(parsed, expr);
    }

    /// Every window statistic equals a direct per-step recomputation over
    /// the raw slice.
    #[test]
    fn window_stats_match_direct_recomputation(
        values in prop::collection::vec(-100.0f64..100.0, 1..64),
        w in 1usize..8,
        stat in stat_strategy(),
    ) {
        let masked: Vec<Option<f64>> = values.iter().map(|&x| Some(x)).collect();
        let series = FeatureSeries::from_raw(&masked);
        let out = ops::window(&series, w, stat).unwrap();
        for t in 0..values.len() {
            if t + 1 < w {
                prop_assert_eq!(out.values[t], None);
                continue;
            }
            let slice = &values[t + 1 - w..=t];
            let expected = match stat {
                WindowStat::Mean => slice.iter().sum::<f64>() / w as f64,
                WindowStat::Sum => slice.iter().sum::<f64>(),
                WindowStat::Max => slice.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                WindowStat::Min => slice.iter().copied().fold(f64::INFINITY, f64::min),
                WindowStat::Std => {
                    let m = slice.iter().sum::<f64>() / w as f64;
                    (slice.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / w as f64).sqrt()
                }
                WindowStat::Ewm => {
                    let alpha = 2.0 / (w as f64 + 1.0);
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (lag, x) in slice.iter().rev().enumerate() {
                        num += (1.0 - alpha).powi(lag as i32) * x;
                        den += (1.0 - alpha).powi(lag as i32);
                    }
                    num / den
                }
            };
            let got = out.values[t].unwrap();
            prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                "stat {:?} w {} t {}: {} vs {}", stat, w, t, got, expected);
        }
    }

    /// Warmup bookkeeping is exact on missing-free inputs: defined exactly
    /// from `warmup` onward (ratio excluded since zero denominators may
    /// legitimately create interior missing).
    #[test]
    fn warmup_is_exact_without_interior_missing(
        expr in expr_strategy(false),
        values in prop::collection::vec(0.5f64..50.0, 40..70),
    ) {
        let panel = Panel::new(vec![values], None).unwrap();
        let out = featprog::evaluate_expr(&panel, 0, &expr).unwrap();
        for (t, v) in out.values.iter().enumerate() {
            if t < out.warmup {
                prop_assert!(v.is_none(), "t {} < warmup {} but defined", t, out.warmup);
            } else {
                prop_assert!(v.is_some(), "t {} >= warmup {} but missing", t, out.warmup);
            }
        }
        prop_assert_eq!(out.warmup, expr.warmup_with(&|_| None).unwrap());
    }

    /// With ratio in play the one-sided guarantee still holds: nothing is
    /// ever defined before the warmup.
    #[test]
    fn warmup_lower_bound_holds_with_ratio(
        expr in expr_strategy(true),
        values in prop::collection::vec(-50.0f64..50.0, 40..70),
    ) {
        let panel = Panel::new(vec![values], None).unwrap();
        let out = featprog::evaluate_expr(&panel, 0, &expr).unwrap();
        for v in out.values.iter().take(out.warmup) {
            prop_assert!(v.is_none());
        }
    }

    /// Shifts compose additively.
    #[test]
    fn shift_composition(
        values in prop::collection::vec(-10.0f64..10.0, 10..40),
        a in 1usize..4,
        b in 1usize..4,
    ) {
        prop_assume!(a + b < values.len());
        let masked: Vec<Option<f64>> = values.iter().map(|&x| Some(x)).collect();
        let s = FeatureSeries::from_raw(&masked);
        let two = ops::shift(&ops::shift(&s, a).unwrap(), b).unwrap();
        let one = ops::shift(&s, a + b).unwrap();
        prop_assert_eq!(two.values, one.values);
        prop_assert_eq!(two.warmup, one.warmup);
    }

    /// The spin conditional is an exact two-point distribution for any
    /// finite field.
    #[test]
    fn spin_conditional_sums_to_one(gamma in -1e3f64..1e3) {
        prop_assert_eq!(cond_prob(gamma, 1) + cond_prob(gamma, -1), 1.0);
        let p = prob_up(gamma);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    /// Panels survive a CSV round trip bit-exactly, including missing cells.
    #[test]
    fn panel_csv_round_trip(
        rows in prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.9, -1e6f64..1e6), 12),
            1..5,
        ),
    ) {
        let names = (0..rows.len()).map(|i| format!("v{i}")).collect();
        let panel = Panel::from_masked(names, rows, None).unwrap();
        let mut buf = Vec::new();
        panel.to_csv(&mut buf).unwrap();
        let back = Panel::from_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, panel);
    }

    /// Pearson squared never exceeds 1 and r2 never exceeds 1.
    #[test]
    fn metric_bounds(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
    ) {
        let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = featprog::pearson(&actual, &predicted) {
            prop_assert!(r * r <= 1.0 + 1e-12);
        }
        if let Ok(r2) = featprog::r2(&actual, &predicted) {
            prop_assert!(r2 <= 1.0);
        }
    }
}
