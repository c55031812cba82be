//! Feature programs: the three-level feature template plus the flow policy
//! that controls order-by-order inheritance.
//!
//! A program is a JSON document; expressions inside it use the grammar from
//! [`crate::expr`]. See `parse_program` for the schema.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::{is_reserved_name, parse_expr, Expr};
use crate::ops::WindowStat;

pub const DEFAULT_MAX_ORDER: u32 = 2;

/// Whether each order's outputs are appended to the next order's basic list
/// (and therefore become referenceable by name from later blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flow {
    All,
    None,
}

/// One order level of the template.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderBlock {
    pub order: u32,
    /// Auto-named expressions; the feature name is the canonical expanded
    /// lineage string.
    pub basic: Vec<Expr>,
    /// User-named expressions, evaluated after the basic list.
    pub custom: Vec<(String, Expr)>,
}

impl OrderBlock {
    pub fn new(order: u32) -> Self {
        OrderBlock { order, basic: Vec::new(), custom: Vec::new() }
    }

    pub fn feature_count(&self) -> usize {
        self.basic.len() + self.custom.len()
    }
}

/// A validated feature program.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProgram {
    /// Lookback sizes the program was built around (metadata).
    pub lookbacks: Vec<usize>,
    /// Window statistics the program was built around (metadata).
    pub stats: Vec<WindowStat>,
    pub flow: Flow,
    pub max_order: u32,
    pub orders: Vec<OrderBlock>,
}

impl FeatureProgram {
    /// Total number of features per variate (K).
    pub fn feature_count(&self) -> usize {
        self.orders.iter().map(OrderBlock::feature_count).sum()
    }

    /// Feature counts keyed by order.
    pub fn order_census(&self) -> Vec<(u32, usize)> {
        self.orders.iter().map(|b| (b.order, b.feature_count())).collect()
    }

    /// Checks every program invariant: contiguous sorted orders starting at
    /// 0, orders within the cap, resolvable references (subject to the flow
    /// policy), computed order matching the declared block, program-wide
    /// unique non-reserved names, and positive integer parameters (already
    /// guaranteed by the expression parser for parsed programs).
    pub fn validate(&self) -> Result<()> {
        for (i, block) in self.orders.iter().enumerate() {
            if block.order != i as u32 {
                return Err(Error::Program(format!(
                    "order blocks must be contiguous from 0; found order {} at position {i}",
                    block.order
                )));
            }
            if block.order > self.max_order {
                return Err(Error::Program(format!(
                    "order {} exceeds max_order {}",
                    block.order, self.max_order
                )));
            }
        }
        let mut orders_by_name: HashMap<String, u32> = HashMap::new();
        for block in &self.orders {
            // names visible to expressions in this block: earlier blocks when
            // flow is `all`, plus features already defined in this block
            let mut visible: HashMap<String, u32> = match self.flow {
                Flow::All => orders_by_name.clone(),
                Flow::None => HashMap::new(),
            };
            let mut block_names: Vec<String> = Vec::new();
            let exprs = block
                .basic
                .iter()
                .map(|e| (None, e))
                .chain(block.custom.iter().map(|(n, e)| (Some(n.as_str()), e)));
            for (custom_name, expr) in exprs {
                let lookup = |name: &str| visible.get(name).copied();
                let order = expr
                    .order_with(&lookup)
                    .map_err(|e| contextualize(e, custom_name, expr))?;
                if order != block.order {
                    return Err(Error::Program(format!(
                        "feature `{}` has computed order {order} but is declared in an \
                         order-{} block",
                        custom_name.map_or_else(|| expr.to_string(), str::to_string),
                        block.order
                    )));
                }
                let name = match custom_name {
                    Some(n) => {
                        if is_reserved_name(n) {
                            return Err(Error::Program(format!(
                                "feature name `{n}` is reserved"
                            )));
                        }
                        n.to_string()
                    }
                    None => expr.to_string(),
                };
                if orders_by_name.contains_key(&name) || block_names.contains(&name) {
                    return Err(Error::Program(format!("duplicate feature name `{name}`")));
                }
                visible.insert(name.clone(), order);
                block_names.push(name);
            }
            for name in block_names {
                orders_by_name.insert(name, block.order);
            }
        }
        Ok(())
    }

    /// Canonical JSON document for the program.
    pub fn to_json(&self) -> String {
        let doc = ProgramDoc::from(self);
        serde_json::to_string_pretty(&doc).expect("program serialization cannot fail")
    }

    /// Hex SHA-256 of the canonical JSON; stable across runs and platforms.
    pub fn hash(&self) -> String {
        let doc = ProgramDoc::from(self);
        let compact = serde_json::to_string(&doc).expect("program serialization cannot fail");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn contextualize(err: Error, custom_name: Option<&str>, expr: &Expr) -> Error {
    match err {
        Error::Program(msg) => match custom_name {
            Some(n) => Error::Program(format!("in feature `{n}`: {msg}")),
            None => Error::Program(format!("in expression `{expr}`: {msg}")),
        },
        other => other,
    }
}

// --- JSON schema ---------------------------------------------------------

fn default_version() -> u32 {
    1
}

#[derive(Serialize, Deserialize)]
struct ProgramDoc {
    #[serde(default = "default_version")]
    version: u32,
    #[serde(default)]
    lookbacks: Vec<usize>,
    #[serde(default)]
    stats: Vec<WindowStat>,
    #[serde(default)]
    flow: Option<Flow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_order: Option<u32>,
    orders: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    order: u32,
    #[serde(default)]
    basic: Vec<String>,
    #[serde(default)]
    custom: Vec<CustomDoc>,
}

#[derive(Serialize, Deserialize)]
struct CustomDoc {
    name: String,
    expr: String,
}

impl From<&FeatureProgram> for ProgramDoc {
    fn from(p: &FeatureProgram) -> Self {
        ProgramDoc {
            version: 1,
            lookbacks: p.lookbacks.clone(),
            stats: p.stats.clone(),
            flow: Some(p.flow),
            max_order: (p.max_order != DEFAULT_MAX_ORDER).then_some(p.max_order),
            orders: p
                .orders
                .iter()
                .map(|b| BlockDoc {
                    order: b.order,
                    basic: b.basic.iter().map(|e| e.to_string()).collect(),
                    custom: b
                        .custom
                        .iter()
                        .map(|(n, e)| CustomDoc { name: n.clone(), expr: e.to_string() })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Parses and validates a feature program from its JSON document.
///
/// Schema:
///
/// ```json
/// {
///   "version": 1,
///   "lookbacks": [7, 25],
///   "stats": ["mean", "max", "min", "sum", "std", "ewm"],
///   "flow": "all",
///   "max_order": 2,
///   "orders": [
///     {"order": 0, "basic": ["raw"], "custom": [{"name": "x", "expr": "wmean(raw,7)"}]}
///   ]
/// }
/// ```
///
/// Everything except `orders` is optional; `flow` defaults to `"all"` and
/// `max_order` to 2.
pub fn parse_program(text: &str) -> Result<FeatureProgram> {
    let doc: ProgramDoc = serde_json::from_str(text)?;
    if doc.version != 1 {
        return Err(Error::Program(format!(
            "unsupported program version {} (expected 1)",
            doc.version
        )));
    }
    if doc.lookbacks.contains(&0) {
        return Err(Error::Program("lookbacks must be positive".into()));
    }
    let mut orders = Vec::with_capacity(doc.orders.len());
    for block in doc.orders {
        let mut basic = Vec::with_capacity(block.basic.len());
        for src in &block.basic {
            basic.push(parse_embedded(src, None)?);
        }
        let mut custom = Vec::with_capacity(block.custom.len());
        for c in &block.custom {
            custom.push((c.name.clone(), parse_embedded(&c.expr, Some(&c.name))?));
        }
        orders.push(OrderBlock { order: block.order, basic, custom });
    }
    let program = FeatureProgram {
        lookbacks: doc.lookbacks,
        stats: doc.stats,
        flow: doc.flow.unwrap_or(Flow::All),
        max_order: doc.max_order.unwrap_or(DEFAULT_MAX_ORDER),
        orders,
    };
    program.validate()?;
    Ok(program)
}

/// Positions in the reported error are relative to the embedded expression
/// string, with the context named in the message.
fn parse_embedded(src: &str, custom_name: Option<&str>) -> Result<Expr> {
    parse_expr(src).map_err(|e| match e {
        Error::Parse { line, col, msg } => Error::Parse {
            line,
            col,
            msg: match custom_name {
                Some(n) => format!("in expression for feature `{n}` (`{src}`): {msg}"),
                None => format!("in expression `{src}`: {msg}"),
            },
        },
        other => other,
    })
}

// --- Builtin programs ----------------------------------------------------

/// The default 45-feature program over lookbacks {7, 25}.
///
/// Composition per variate:
///
/// * order 0 (9): `raw`; wmean/wmax/wmin at both lookbacks; shift at both
///   lookbacks.
/// * order 1 (18): first differences `d1(x) := diff(x, shift(x,1))` of each
///   order-0 feature; the cross-differences `diff(raw, wmean7)`,
///   `diff(raw, wmean25)`, `diff(wmean7, wmean25)`; wmean/wmax/wmin of
///   `d1(raw)` at both lookbacks.
/// * order 2 (18): `d1` of each order-1 first difference; cross-differences
///   among `{d1(raw), wmean7(d1(raw)), wmean25(d1(raw))}`; wmean/wmax/wmin
///   of `d2(raw)` at both lookbacks.
pub fn default_program() -> FeatureProgram {
    const LOOKBACKS: [usize; 2] = [7, 25];
    const STATS: [WindowStat; 3] = [WindowStat::Mean, WindowStat::Max, WindowStat::Min];
    let raw = Expr::raw;

    let mut order0 = vec![raw()];
    for w in LOOKBACKS {
        for stat in STATS {
            order0.push(raw().window(w, stat));
        }
    }
    for w in LOOKBACKS {
        order0.push(raw().shift(w));
    }

    let wmean7 = raw().window(7, WindowStat::Mean);
    let wmean25 = raw().window(25, WindowStat::Mean);
    let d1_raw = raw().first_difference();

    let mut order1: Vec<Expr> = order0.iter().cloned().map(Expr::first_difference).collect();
    order1.push(Expr::diff(raw(), wmean7.clone()));
    order1.push(Expr::diff(raw(), wmean25.clone()));
    order1.push(Expr::diff(wmean7, wmean25));
    for w in LOOKBACKS {
        for stat in STATS {
            order1.push(d1_raw.clone().window(w, stat));
        }
    }

    let d1s: Vec<Expr> = order0.iter().cloned().map(Expr::first_difference).collect();
    let mut order2: Vec<Expr> = d1s.into_iter().map(Expr::first_difference).collect();
    let w7d1 = d1_raw.clone().window(7, WindowStat::Mean);
    let w25d1 = d1_raw.clone().window(25, WindowStat::Mean);
    order2.push(Expr::diff(d1_raw.clone(), w7d1.clone()));
    order2.push(Expr::diff(d1_raw.clone(), w25d1.clone()));
    order2.push(Expr::diff(w7d1, w25d1));
    let d2_raw = d1_raw.first_difference();
    for w in LOOKBACKS {
        for stat in STATS {
            order2.push(d2_raw.clone().window(w, stat));
        }
    }

    let program = FeatureProgram {
        lookbacks: LOOKBACKS.to_vec(),
        stats: STATS.to_vec(),
        flow: Flow::All,
        max_order: DEFAULT_MAX_ORDER,
        orders: vec![
            OrderBlock { order: 0, basic: order0, custom: Vec::new() },
            OrderBlock { order: 1, basic: order1, custom: Vec::new() },
            OrderBlock { order: 2, basic: order2, custom: Vec::new() },
        ],
    };
    debug_assert!(program.validate().is_ok());
    program
}

/// The three customization targets with exact hand-crafted counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resemblance {
    /// Momentum: percentage change over the past `dtau` steps.
    Mom,
    /// Bias: relative deviation from the `dtau`-sample moving average.
    Bias,
    /// Absolute energy: sum of squares over the trailing `dtau` samples.
    AbsEnergy,
}

impl Resemblance {
    pub fn feature_name(self) -> &'static str {
        match self {
            Resemblance::Mom => "mom",
            Resemblance::Bias => "bias",
            Resemblance::AbsEnergy => "absenergy",
        }
    }
}

impl FromStr for Resemblance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mom" => Ok(Resemblance::Mom),
            "bias" => Ok(Resemblance::Bias),
            "absenergy" => Ok(Resemblance::AbsEnergy),
            other => Err(Error::Parameter(format!(
                "unknown resemblance target `{other}` (expected mom, bias or absenergy)"
            ))),
        }
    }
}

impl fmt::Display for Resemblance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.feature_name())
    }
}

/// Builds the customization program whose single named output reproduces the
/// corresponding hand-crafted feature exactly:
///
/// * `mom`       = `ratio(diff(raw, shift(raw, dtau)), shift(raw, dtau))`
/// * `bias`      = `ratio(diff(raw, wmean(raw, dtau)), wmean(raw, dtau))`
/// * `absenergy` = `wsum(square(raw), dtau)`
pub fn resemblance_program(which: Resemblance, dtau: usize) -> Result<FeatureProgram> {
    if dtau == 0 {
        return Err(Error::Parameter("dtau must be >= 1".into()));
    }
    let raw = Expr::raw;
    let (expr, stats) = match which {
        Resemblance::Mom => {
            let lag = raw().shift(dtau);
            (Expr::ratio(Expr::diff(raw(), lag.clone()), lag), vec![])
        }
        Resemblance::Bias => {
            let sma = raw().window(dtau, WindowStat::Mean);
            (Expr::ratio(Expr::diff(raw(), sma.clone()), sma), vec![WindowStat::Mean])
        }
        Resemblance::AbsEnergy => {
            (raw().square().window(dtau, WindowStat::Sum), vec![WindowStat::Sum])
        }
    };
    let order = expr.order()?;
    let mut orders: Vec<OrderBlock> = (0..=order).map(OrderBlock::new).collect();
    orders[order as usize].custom.push((which.feature_name().to_string(), expr));
    let program = FeatureProgram {
        lookbacks: vec![dtau],
        stats,
        flow: Flow::All,
        max_order: DEFAULT_MAX_ORDER,
        orders,
    };
    program.validate()?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_census_is_9_18_18() {
        let p = default_program();
        assert_eq!(p.feature_count(), 45);
        assert_eq!(p.order_census(), vec![(0, 9), (1, 18), (2, 18)]);
        p.validate().unwrap();
    }

    #[test]
    fn default_names_unique() {
        let p = default_program();
        let mut names: Vec<String> = p
            .orders
            .iter()
            .flat_map(|b| b.basic.iter().map(|e| e.to_string()))
            .collect();
        let before = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), before);
    }

    #[test]
    fn minimal_program_parses() {
        let p = parse_program(r#"{"orders":[{"order":0, "basic":["raw"]}]}"#).unwrap();
        assert_eq!(p.feature_count(), 1);
        assert_eq!(p.orders[0].order, 0);
        assert_eq!(p.flow, Flow::All);
    }

    #[test]
    fn mom_program_parses_at_order_one() {
        let text = r#"{
            "version": 1,
            "orders": [
                {"order": 0},
                {"order": 1, "custom": [
                    {"name": "mom", "expr": "ratio(diff(raw,shift(raw,5)),shift(raw,5))"}
                ]}
            ]
        }"#;
        let p = parse_program(text).unwrap();
        assert_eq!(p.orders[1].custom[0].0, "mom");
        assert_eq!(p.orders[1].custom[0].1.order().unwrap(), 1);
    }

    #[test]
    fn order_mismatch_rejected() {
        let text = r#"{"orders":[{"order":0, "basic":["diff(raw,raw)"]}]}"#;
        match parse_program(text) {
            Err(Error::Program(msg)) => assert!(msg.contains("computed order 1"), "{msg}"),
            other => panic!("expected program error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let text = r#"{"orders":[{"order":0, "basic":["raw"], "custom":[
            {"name":"x","expr":"wmean(raw,2)"},
            {"name":"x","expr":"wmax(raw,2)"}
        ]}]}"#;
        assert!(matches!(parse_program(text), Err(Error::Program(_))));
    }

    #[test]
    fn flow_none_blocks_cross_order_refs() {
        let text = r#"{"flow":"none","orders":[
            {"order":0, "custom":[{"name":"sm","expr":"wmean(raw,3)"}]},
            {"order":1, "basic":["diff(sm,raw)"]}
        ]}"#;
        assert!(matches!(parse_program(text), Err(Error::Program(_))));
        let allowed = text.replace("\"none\"", "\"all\"");
        parse_program(&allowed).unwrap();
    }

    #[test]
    fn order_cap_enforced() {
        let d2 = "diff(diff(raw,shift(raw,1)),shift(diff(raw,shift(raw,1)),1))";
        let d3 = format!("diff({d2},shift({d2},1))");
        let text = format!(
            r#"{{"orders":[{{"order":0}},{{"order":1}},{{"order":2}},{{"order":3,"basic":["{d3}"]}}]}}"#
        );
        assert!(matches!(parse_program(&text), Err(Error::Program(_))));
        let relaxed = format!(
            r#"{{"max_order":3,"orders":[{{"order":0}},{{"order":1}},{{"order":2}},{{"order":3,"basic":["{d3}"]}}]}}"#
        );
        parse_program(&relaxed).unwrap();
    }

    #[test]
    fn json_round_trip() {
        for p in [
            default_program(),
            resemblance_program(Resemblance::Mom, 5).unwrap(),
            resemblance_program(Resemblance::Bias, 3).unwrap(),
            resemblance_program(Resemblance::AbsEnergy, 25).unwrap(),
        ] {
            let back = parse_program(&p.to_json()).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.hash(), p.hash());
        }
    }

    #[test]
    fn syntax_error_positions_surface() {
        let text = r#"{"orders":[{"order":0, "basic":["wmean(raw"]}]}"#;
        match parse_program(text) {
            Err(Error::Parse { col, .. }) => assert!(col > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn resemblance_orders() {
        assert_eq!(resemblance_program(Resemblance::Mom, 1).unwrap().orders.len(), 2);
        assert_eq!(resemblance_program(Resemblance::Bias, 7).unwrap().orders.len(), 2);
        assert_eq!(resemblance_program(Resemblance::AbsEnergy, 7).unwrap().orders.len(), 1);
        assert!(resemblance_program(Resemblance::Mom, 0).is_err());
    }
}
