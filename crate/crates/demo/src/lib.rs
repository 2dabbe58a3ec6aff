//! Single-page browser demo. Every export takes plain numbers or JSON text and
//! returns JSON text, so the page needs no bindings beyond `wasm-bindgen`.

use crm_core::audit::{score_anomaly, Thresholds};
use crm_core::detect::{cross_validate, make_folds, CvConfig};
use crm_core::features::{
    calibrate, extract_features, CalibrationArtifact, CalibrationConfig, DirectionKind, DirectionSpec, FeatureConfig,
    LayerDirection, LayerScore, Level,
};
use crm_core::linalg::{dot, normal_cdf};
use crm_core::synth::{generate, PlantedSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const LAYERS: usize = 8;
const DIM: usize = 16;
const SIGNAL: usize = 3;
const ALIGNED: f64 = 3.0;

#[derive(Debug, Serialize)]
pub struct PlantedResult {
    pub measured_auc: f64,
    pub closed_form_auc: f64,
    /// |cos| between the fitted direction and the planted axis.
    pub direction_cosine: f64,
}

#[derive(Debug, Serialize)]
pub struct DirectionComparison {
    pub pc1_auc: f64,
    pub supervised_auc: f64,
}

fn cv_auc(ds: &crm_core::trace::Dataset, artifact: &CalibrationArtifact) -> Result<f64, String> {
    let t = extract_features(ds, artifact, &FeatureConfig::levels(&[Level::L3])).map_err(|e| e.to_string())?;
    let plan = make_folds(&t.labels, 5, 42).map_err(|e| e.to_string())?;
    let cfg = CvConfig {
        n_boot: 0,
        ..CvConfig::default()
    };
    Ok(cross_validate(&t.rows, &t.labels, &plan, &cfg).map_err(|e| e.to_string())?.mean_auc)
}

/// Plant a shift of `ratio` noise standard deviations on one layer, run the
/// full pipeline and compare with `Phi(ratio / sqrt 2)`.
pub fn planted(ratio: f64, samples: usize, seed: u64) -> Result<PlantedResult, String> {
    let sigma = (1.0 + ALIGNED * ALIGNED).sqrt();
    let spec = PlantedSpec::distributed(LAYERS, DIM, samples, vec![SIGNAL], ratio * sigma, 1.0, ALIGNED, seed);
    let ds = generate(&spec).map_err(|e| e.to_string())?;
    let artifact = calibrate(&ds, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
    let axis = spec.layers[SIGNAL].shift_axis.as_deref().unwrap_or(&[]);
    let direction_cosine = artifact
        .directions
        .iter()
        .find(|d| d.layer == SIGNAL)
        .map_or(0.0, |d| dot(&d.vector, axis).abs());
    Ok(PlantedResult {
        measured_auc: cv_auc(&ds, &artifact)?,
        closed_form_auc: normal_cdf(ratio / std::f64::consts::SQRT_2),
        direction_cosine,
    })
}

/// A nuisance axis of std `nuisance` sits orthogonal to the signal, so the
/// unsupervised direction tracks the nuisance once it dominates.
pub fn compare_directions(nuisance: f64, samples: usize, seed: u64) -> Result<DirectionComparison, String> {
    let spec = PlantedSpec::anisotropic(LAYERS, DIM, samples, &[SIGNAL], 2.0, 1.0, nuisance, 0.0, seed);
    let ds = generate(&spec).map_err(|e| e.to_string())?;
    let mut aucs = [0.0; 2];
    for (slot, direction) in [DirectionSpec::Pc1, DirectionSpec::Supervised].into_iter().enumerate() {
        let cfg = CalibrationConfig {
            direction,
            ..CalibrationConfig::default()
        };
        let artifact = calibrate(&ds, &cfg).map_err(|e| e.to_string())?;
        let held: Vec<usize> = (0..ds.len())
            .filter(|&i| !artifact.calibration_ids.contains(&ds.samples[i].sample_id))
            .collect();
        aucs[slot] = cv_auc(&ds.subset(&held), &artifact)?;
    }
    Ok(DirectionComparison {
        pc1_auc: aucs[0],
        supervised_auc: aucs[1],
    })
}

/// Score a trajectory against per-layer means and stds.
pub fn anomaly(lts: &[f64], mean: &[f64], std: &[f64]) -> Result<String, String> {
    if mean.len() != lts.len() || std.len() != lts.len() {
        return Err("lts, mean and std must have the same length".into());
    }
    let l = lts.len();
    let artifact = CalibrationArtifact {
        model_name: "demo".into(),
        num_layers: l,
        hidden_dim: 1,
        selected_layers: (0..l).collect(),
        layer_scores: vec![1.0 / l.max(1) as f64; l],
        layer_score: LayerScore::TotalVarianceShare,
        variance_ratio_threshold: 0.01,
        directions: (0..l)
            .map(|layer| LayerDirection {
                layer,
                vector: vec![1.0],
                kind: DirectionKind::Pc1,
                explained_variance_ratio: None,
            })
            .collect(),
        lts_mean: mean.to_vec(),
        lts_std: std.to_vec(),
        seed: 0,
        n_cal: 0,
        calibration_ids: vec![],
        fingerprint: String::new(),
    }
    .seal();
    let s = score_anomaly(lts, &artifact, &Thresholds::default()).map_err(|e| e.to_string())?;
    serde_json::to_string(&s).map_err(|e| e.to_string())
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = plantedAuc)]
pub fn planted_auc(ratio: f64, samples: usize, seed: u32) -> Result<String, JsValue> {
    js(planted(ratio, samples, seed as u64))
}

#[wasm_bindgen(js_name = compareDirections)]
pub fn compare_directions_js(nuisance: f64, samples: usize, seed: u32) -> Result<String, JsValue> {
    js(compare_directions(nuisance, samples, seed as u64))
}

#[wasm_bindgen(js_name = scoreAnomaly)]
pub fn score_anomaly_js(lts: Vec<f64>, mean: Vec<f64>, std: Vec<f64>) -> Result<String, JsValue> {
    anomaly(&lts, &mean, &std).map_err(|e| JsValue::from_str(&e))
}
