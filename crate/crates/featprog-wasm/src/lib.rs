//! Browser bindings for the interactive demo page.
//!
//! Three operations, all speaking JSON strings so the page needs no custom
//! marshalling:
//!
//! * [`simulate_demo`] — run the spin-gas dynamics from a few knob values
//!   and return the trajectories;
//! * [`generate_features`] — run a feature program over a panel and return
//!   one variate's feature series plus the census;
//! * [`glauber_curve`] — the spin-update conditional alongside seeded
//!   empirical frequencies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use featprog::{
    default_program, generate, parse_program, prob_up, simulate_panel, step_sample, Panel,
    SpinGasParams, SpinHistory,
};

#[derive(Deserialize)]
struct SimulateRequest {
    n: usize,
    steps: usize,
    seed: u64,
    /// Nearest-neighbor ring coupling strength.
    #[serde(default)]
    ring_j: f64,
    /// Diagonal momentum coupling.
    #[serde(default)]
    g1_diag: f64,
    /// Diagonal acceleration coupling.
    #[serde(default)]
    g2_diag: f64,
    /// Uniform external field.
    #[serde(default)]
    field: f64,
    #[serde(default = "default_c")]
    c: f64,
}

fn default_c() -> f64 {
    0.1
}

#[derive(Serialize, Deserialize)]
struct PanelDoc {
    names: Vec<String>,
    time: Vec<i64>,
    values: Vec<Vec<Option<f64>>>,
}

impl PanelDoc {
    fn from_panel(panel: &Panel) -> Self {
        PanelDoc {
            names: panel.names().to_vec(),
            time: panel.time().to_vec(),
            values: (0..panel.n_variates()).map(|i| panel.variate(i).to_vec()).collect(),
        }
    }

    fn into_panel(self) -> Result<Panel, featprog::Error> {
        Panel::from_masked(self.names, self.values, Some(self.time))
    }
}

fn knob_params(req: &SimulateRequest) -> Result<SpinGasParams, String> {
    if req.n == 0 || req.n > 64 {
        return Err("n must be between 1 and 64".into());
    }
    let mut p = SpinGasParams::zero(req.n);
    p.c = req.c;
    if req.n > 1 && req.ring_j != 0.0 {
        for i in 0..req.n {
            let right = (i + 1) % req.n;
            p.j[i][right] = req.ring_j;
            p.j[right][i] = req.ring_j;
        }
    }
    for i in 0..req.n {
        p.g1[i][i] = req.g1_diag;
        p.g2[i][i] = req.g2_diag;
        p.h[i] = req.field;
    }
    Ok(p)
}

/// Simulates the dynamics from knob values. Request:
/// `{"n":4,"steps":400,"seed":7,"ring_j":0.3,"g1_diag":0.5,"g2_diag":0,
///   "field":0,"c":0.1}`; returns a panel document.
#[wasm_bindgen]
pub fn simulate_demo(request_json: &str) -> Result<String, String> {
    let req: SimulateRequest =
        serde_json::from_str(request_json).map_err(|e| format!("bad request: {e}"))?;
    if req.steps == 0 || req.steps > 20_000 {
        return Err("steps must be between 1 and 20000".into());
    }
    let params = knob_params(&req)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let panel = simulate_panel(&mut rng, &params, &vec![0.0; req.n], req.steps, None)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&PanelDoc::from_panel(&panel)).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct FeatureDoc {
    name: String,
    order: u32,
    warmup: usize,
    lineage: String,
    values: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct GenerateResponse {
    variate: String,
    feature_count: usize,
    census: Vec<(u32, usize)>,
    max_warmup: usize,
    features: Vec<FeatureDoc>,
}

/// Runs a feature program (`"default"` or a program JSON document) over a
/// panel document and returns the features of one variate.
#[wasm_bindgen]
pub fn generate_features(
    panel_json: &str,
    program_json: &str,
    variate: usize,
) -> Result<String, String> {
    let doc: PanelDoc =
        serde_json::from_str(panel_json).map_err(|e| format!("bad panel: {e}"))?;
    let panel = doc.into_panel().map_err(|e| e.to_string())?;
    if variate >= panel.n_variates() {
        return Err(format!("variate {variate} out of range"));
    }
    let program = if program_json.trim() == "default" {
        default_program()
    } else {
        parse_program(program_json).map_err(|e| e.to_string())?
    };
    let (matrix, report) = generate(&panel, &program).map_err(|e| e.to_string())?;
    let features = matrix.features[variate]
        .iter()
        .map(|f| FeatureDoc {
            name: f.name.clone(),
            order: f.order,
            warmup: f.warmup,
            lineage: f.lineage.clone(),
            values: f.values.clone(),
        })
        .collect();
    let response = GenerateResponse {
        variate: matrix.variate_names[variate].clone(),
        feature_count: report.feature_count,
        census: report.per_order_counts.iter().map(|(&o, &c)| (o, c)).collect(),
        max_warmup: report.max_warmup,
        features,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

/// The builtin 45-feature program, for prefilling the editor.
#[wasm_bindgen]
pub fn default_program_json() -> String {
    default_program().to_json()
}

#[derive(Serialize)]
struct CurveResponse {
    gamma: Vec<f64>,
    prob: Vec<f64>,
    sample_gamma: Vec<f64>,
    sample_freq: Vec<f64>,
    trials: usize,
}

/// The conditional `P(+1 | gamma)` over a gamma grid, plus seeded empirical
/// frequencies from the sampler at a handful of field values.
#[wasm_bindgen]
pub fn glauber_curve(trials: usize, seed: u64) -> Result<String, String> {
    if trials == 0 || trials > 1_000_000 {
        return Err("trials must be between 1 and 1e6".into());
    }
    let gamma: Vec<f64> = (0..=240).map(|i| -3.0 + i as f64 * 0.025).collect();
    let prob: Vec<f64> = gamma.iter().map(|&g| prob_up(g)).collect();

    let sample_gamma: Vec<f64> = (-6..=6).map(|i| i as f64 * 0.5).collect();
    let mut sample_freq = Vec::with_capacity(sample_gamma.len());
    for (idx, &g) in sample_gamma.iter().enumerate() {
        let mut params = SpinGasParams::zero(1);
        params.h[0] = g;
        let history = SpinHistory::uniform_up(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let mut ups = 0usize;
        for _ in 0..trials {
            if step_sample(&mut rng, &params, &history)[0] == 1 {
                ups += 1;
            }
        }
        sample_freq.push(ups as f64 / trials as f64);
    }
    serde_json::to_string(&CurveResponse { gamma, prob, sample_gamma, sample_freq, trials })
        .map_err(|e| e.to_string())
}
