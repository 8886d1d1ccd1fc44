//! Browser bindings for the demo page: a Dirichlet simplex explorer, a
//! logits-to-uncertainty calculator and a small in-browser training run.
//!
//! The plain functions return `dpn_core::Result` and are what the native
//! tests exercise; the `#[wasm_bindgen]` wrappers only convert errors.

use dpn_core::config::RunConfig;
use dpn_core::data::{Label, ScenarioData};
use dpn_core::dirichlet::{entropy_of_mean, DirichletParams, UncertaintyScores};
use dpn_core::eval::{build_report, scores_of_logits, EvalReport, Measure};
use dpn_core::numeric::argmax;
use dpn_core::render::{render_pgm, SimplexGrid};
use dpn_core::trainer::{train_baseline, train_dpn, Model};
use dpn_core::{Error, Result};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Piecewise-linear dark-blue to yellow ramp for `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 4] = [
        [20.0, 24.0, 82.0],
        [33.0, 120.0, 142.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        *out = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    rgb
}

/// RGBA pixels of the simplex density image, `width` wide; pixels outside
/// the triangle are transparent.
pub fn simplex_pixels(alphas: &[f64], width: usize) -> Result<(usize, Vec<u8>)> {
    let params = DirichletParams::from_alphas(alphas)?;
    let pgm = render_pgm(&params, width)?;
    // header is "P5\n{w} {h}\n255\n"
    let mut lines = pgm.splitn(4, |&b| b == b'\n');
    let (_, dims, _) = (lines.next(), lines.next().unwrap_or_default(), lines.next());
    let body = lines.next().unwrap_or_default();
    let height = String::from_utf8_lossy(dims)
        .split(' ')
        .nth(1)
        .and_then(|h| h.parse().ok())
        .unwrap_or(0);
    let mut rgba = Vec::with_capacity(body.len() * 4);
    for &v in body {
        if v == 0 {
            rgba.extend([0, 0, 0, 0]);
        } else {
            let [r, g, b] = colormap((v - 1) as f64 / 254.0);
            rgba.extend([r, g, b, 255]);
        }
    }
    Ok((height, rgba))
}

/// Local maxima of the density on the lattice of the given resolution,
/// flattened as `x1, x2, x3` triples.
pub fn simplex_modes(alphas: &[f64], resolution: usize) -> Result<Vec<f64>> {
    let grid = SimplexGrid::new(&DirichletParams::from_alphas(alphas)?, resolution)?;
    Ok(grid.local_maxima().iter().flat_map(|p| p.point).collect())
}

/// `[predicted class, max probability, mutual information, log precision,
/// expected entropy, entropy of the mean]` for one logit vector.
pub fn scores(logits: &[f64]) -> Result<Vec<f64>> {
    let s = UncertaintyScores::from_logits(logits)?;
    let params = DirichletParams::from_logits(logits)?;
    Ok(vec![
        argmax(logits) as f64,
        s.max_probability,
        s.mutual_information,
        s.log_precision,
        s.expected_entropy,
        entropy_of_mean(&params),
    ])
}

#[wasm_bindgen(js_name = simplexImage)]
pub fn simplex_image(alphas: &[f64], width: usize) -> std::result::Result<Vec<u8>, JsError> {
    simplex_pixels(alphas, width).map(|(_, rgba)| rgba).map_err(js)
}

#[wasm_bindgen(js_name = simplexHeight)]
pub fn simplex_height(width: usize) -> usize {
    (width as f64 * 3f64.sqrt() / 2.0).round() as usize
}

#[wasm_bindgen(js_name = simplexModes)]
pub fn simplex_modes_js(alphas: &[f64], resolution: usize) -> std::result::Result<Vec<f64>, JsError> {
    simplex_modes(alphas, resolution).map_err(js)
}

#[wasm_bindgen(js_name = uncertaintyScores)]
pub fn scores_js(logits: &[f64]) -> std::result::Result<Vec<f64>, JsError> {
    scores(logits).map_err(js)
}

/// Both models trained on the default scenario, plus their report.
#[wasm_bindgen]
pub struct Demo {
    dpn: Model,
    baseline: Model,
    data: ScenarioData,
    report: EvalReport,
}

impl Demo {
    pub fn train(seed: u32, epochs: usize) -> Result<Self> {
        let mut cfg = RunConfig::default_run().with_seed(seed.into());
        cfg.train.epochs = epochs;
        let data = cfg.scenario.generate()?;
        let dpn = train_dpn(&data.train_id, &data.train_ood, &cfg.train)?.model;
        let baseline = train_baseline(&data.train_id, &data.train_ood, &cfg.train)?.model;
        let report = build_report(
            &dpn,
            &baseline,
            &data.holdout_id,
            &data.holdout_ood,
            &data.unseen_ood,
            seed.into(),
        )?;
        Ok(Self {
            dpn,
            baseline,
            data,
            report,
        })
    }

    pub fn report(&self) -> &EvalReport {
        &self.report
    }

    /// OOD score (higher = more OOD) of `measure` on a `size` x `size` grid
    /// over `[-extent, extent]²`, row-major from the top-left corner.
    pub fn score_field(&self, measure: &str, size: usize, extent: f64) -> Result<Vec<f64>> {
        let measure: Measure = measure.parse()?;
        let model = if measure == Measure::Baseline {
            &self.baseline
        } else {
            &self.dpn
        };
        let step = 2.0 * extent / size as f64;
        let mut out = Vec::with_capacity(size * size);
        for row in 0..size {
            let y = extent - (row as f64 + 0.5) * step;
            for col in 0..size {
                let x = -extent + (col as f64 + 0.5) * step;
                let z = model.logits_of(&[x, y])?;
                out.push(measure.ood_score(&scores_of_logits(&z)?));
            }
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, epochs: usize) -> std::result::Result<Demo, JsError> {
        Self::train(seed, epochs).map_err(js)
    }

    pub fn summary(&self) -> String {
        self.report.summary()
    }

    #[wasm_bindgen(js_name = scoreField)]
    pub fn score_field_js(&self, measure: &str, size: usize, extent: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.score_field(measure, size, extent).map_err(js)
    }

    /// `x, y, kind` triples: kind is the class index for in-domain training
    /// samples, -1 for training OOD and -2 for the unseen OOD ring.
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let sets = [
            (&self.data.train_id, None),
            (&self.data.train_ood, Some(-1.0)),
            (&self.data.unseen_ood, Some(-2.0)),
        ];
        for (set, kind) in sets {
            for s in set.iter() {
                let k = kind.unwrap_or_else(|| match s.label {
                    Label::Class(c) => c as f64,
                    Label::Ood => -1.0,
                });
                out.extend([s.features[0], s.features[1], k]);
            }
        }
        out
    }

    /// Uncertainty scores (as in `uncertaintyScores`) of the Dirichlet
    /// network at one point.
    #[wasm_bindgen(js_name = scoresAt)]
    pub fn scores_at(&self, x: f64, y: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.dpn.logits_of(&[x, y]).and_then(|z| scores(&z)).map_err(js)
    }
}
