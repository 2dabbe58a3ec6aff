//! Synthetic paired traces with planted member/non-member structure, plus
//! the analytic AUC oracle for linear read-outs of the displacements.
//!
//! Model, per sample and layer:
//!
//! ```text
//! h0 ~ N(0, base_std^2 I)
//! hc = h0 + y * shift_l * u_l + noise_std * eps + sum_k s_k z_k a_k
//! ```
//!
//! where `y` is the membership label, `u_l` the layer's shift axis and
//! `(a_k, s_k)` its nuisance axes. The displacement does not depend on `h0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detect::roc_auc;
use crate::error::{invalid, CrmError, Result};
use crate::features::{DirectionKind, LayerDirection};
use crate::linalg::{dot, norm, normal_cdf, normalize};
use crate::trace::{Dataset, SectionFlags, TraceHeader, TraceSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceAxis {
    pub axis: Vec<f64>,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantedLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_axis: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nuisance: Vec<NuisanceAxis>,
}

fn default_base_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    #[serde(default = "default_model_name")]
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_samples: usize,
    /// Member shift magnitude along each signal layer's axis.
    pub member_shift: f64,
    pub noise_std: f64,
    #[serde(default = "default_base_std")]
    pub base_std: f64,
    /// One entry per layer.
    pub layers: Vec<PlantedLayer>,
    /// Layers sharing the shift: each gets `member_shift / sqrt(len)` so the
    /// total planted separability matches a single signal layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Vec<usize>>,
    /// Emit label-independent embeddings, KL series and token logprobs.
    #[serde(default)]
    pub emit_surface_sections: bool,
    pub seed: u64,
}

fn default_model_name() -> String {
    "synthetic".into()
}

pub(crate) fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if normalize(&mut v) > 1e-8 {
            return v;
        }
    }
}

/// Unit vector orthogonal to every vector in `basis` (assumed orthonormal).
pub(crate) fn random_orthogonal(rng: &mut impl Rng, d: usize, basis: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v = random_unit(rng, d);
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= p * y);
        }
        if normalize(&mut v) > 1e-6 {
            return v;
        }
    }
}

impl PlantedSpec {
    /// No signal anywhere.
    pub fn null(num_layers: usize, hidden_dim: usize, num_samples: usize, seed: u64) -> Self {
        Self {
            model_name: default_model_name(),
            num_layers,
            hidden_dim,
            num_samples,
            member_shift: 0.0,
            noise_std: 1.0,
            base_std: 1.0,
            layers: vec![PlantedLayer::default(); num_layers],
            block: None,
            emit_surface_sections: false,
            seed,
        }
    }

    /// One signal layer (the middle one) with a random axis.
    pub fn single_layer(
        num_layers: usize,
        hidden_dim: usize,
        num_samples: usize,
        shift: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let mut s = Self::null(num_layers, hidden_dim, num_samples, seed);
        s.member_shift = shift;
        s.noise_std = noise_std;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11e);
        s.layers[num_layers / 2].shift_axis = Some(random_unit(&mut rng, hidden_dim));
        s
    }

    /// Signal split evenly over `block` layers, each with its own axis.
    /// `aligned_nuisance_std` adds label-independent variance along each
    /// shift axis so the axis is also the top principal direction.
    pub fn distributed(
        num_layers: usize,
        hidden_dim: usize,
        num_samples: usize,
        block: Vec<usize>,
        shift: f64,
        noise_std: f64,
        aligned_nuisance_std: f64,
        seed: u64,
    ) -> Self {
        let mut s = Self::null(num_layers, hidden_dim, num_samples, seed);
        s.member_shift = shift;
        s.noise_std = noise_std;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11e);
        for &l in &block {
            let u = random_unit(&mut rng, hidden_dim);
            if aligned_nuisance_std > 0.0 {
                s.layers[l].nuisance.push(NuisanceAxis {
                    axis: u.clone(),
                    std: aligned_nuisance_std,
                });
            }
            s.layers[l].shift_axis = Some(u);
        }
        s.block = Some(block);
        s
    }

    /// Signal on `signal_layers` with a dominant nuisance axis orthogonal to
    /// each shift axis. `aligned_nuisance_std` also puts label-independent
    /// variance on the shift axis, which then ranks second when it is below
    /// `nuisance_std`.
    #[allow(clippy::too_many_arguments)]
    pub fn anisotropic(
        num_layers: usize,
        hidden_dim: usize,
        num_samples: usize,
        signal_layers: &[usize],
        shift: f64,
        noise_std: f64,
        nuisance_std: f64,
        aligned_nuisance_std: f64,
        seed: u64,
    ) -> Self {
        let mut s = Self::null(num_layers, hidden_dim, num_samples, seed);
        s.member_shift = shift;
        s.noise_std = noise_std;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11e);
        for &l in signal_layers {
            let u = random_unit(&mut rng, hidden_dim);
            let a = random_orthogonal(&mut rng, hidden_dim, &[&u]);
            s.layers[l].nuisance.push(NuisanceAxis {
                axis: a,
                std: nuisance_std,
            });
            if aligned_nuisance_std > 0.0 {
                s.layers[l].nuisance.push(NuisanceAxis {
                    axis: u.clone(),
                    std: aligned_nuisance_std,
                });
            }
            s.layers[l].shift_axis = Some(u);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.num_samples == 0 {
            return Err(invalid("num_layers, hidden_dim and num_samples must be positive"));
        }
        if self.num_samples % 2 != 0 {
            return Err(invalid("num_samples must be even for balanced labels"));
        }
        if !(self.noise_std > 0.0) || !(self.base_std >= 0.0) {
            return Err(invalid("noise_std must be positive and base_std nonnegative"));
        }
        if !self.member_shift.is_finite() {
            return Err(invalid("member_shift must be finite"));
        }
        if self.layers.len() != self.num_layers {
            return Err(CrmError::DimensionMismatch {
                expected: self.num_layers,
                got: self.layers.len(),
            });
        }
        let unit = |v: &[f64]| v.len() == self.hidden_dim && (norm(v) - 1.0).abs() <= 1e-9;
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(u) = &layer.shift_axis {
                if !unit(u) {
                    return Err(invalid(format!("layer {l}: shift axis must be unit length d")));
                }
            }
            for n in &layer.nuisance {
                if !unit(&n.axis) || !(n.std >= 0.0) {
                    return Err(invalid(format!("layer {l}: bad nuisance axis")));
                }
            }
        }
        if let Some(block) = &self.block {
            if block.is_empty() {
                return Err(invalid("block must name at least one layer"));
            }
            for &l in block {
                if l >= self.num_layers || self.layers[l].shift_axis.is_none() {
                    return Err(invalid(format!("block layer {l} needs a shift axis")));
                }
            }
        }
        Ok(())
    }

    /// Member-minus-non-member shift magnitude at `layer`.
    pub fn layer_shift(&self, layer: usize) -> f64 {
        if self.layers[layer].shift_axis.is_none() {
            return 0.0;
        }
        match &self.block {
            Some(b) if b.contains(&layer) => self.member_shift / (b.len() as f64).sqrt(),
            _ => self.member_shift,
        }
    }

    /// The planted axis of `layer` as a projection direction.
    pub fn axis_direction(&self, layer: usize) -> Option<LayerDirection> {
        self.layers[layer].shift_axis.as_ref().map(|u| LayerDirection {
            layer,
            vector: u.clone(),
            kind: DirectionKind::Supervised,
            explained_variance_ratio: None,
        })
    }

    pub fn signal_layers(&self) -> Vec<usize> {
        (0..self.num_layers)
            .filter(|&l| self.layers[l].shift_axis.is_some())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: PlantedSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

const SURFACE_EMBED_DIM: usize = 8;
const SURFACE_KL_LEN: usize = 40;
const SURFACE_DOC_TOKENS: usize = 32;

/// Draws a balanced dataset; sample `i` is a member iff `i` is even.
pub fn generate(spec: &PlantedSpec) -> Result<Dataset> {
    spec.validate()?;
    let (l, d) = (spec.num_layers, spec.hidden_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shifts: Vec<f64> = (0..l).map(|layer| spec.layer_shift(layer)).collect();
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut samples = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let member = i % 2 == 0;
        let mut h0 = Vec::with_capacity(l * d);
        let mut hc = Vec::with_capacity(l * d);
        for (layer, plan) in spec.layers.iter().enumerate() {
            let mut disp: Vec<f64> = (0..d).map(|_| spec.noise_std * gauss()).collect();
            if let (true, Some(u)) = (member, &plan.shift_axis) {
                disp.iter_mut().zip(u).for_each(|(x, a)| *x += shifts[layer] * a);
            }
            for n in &plan.nuisance {
                let z = n.std * gauss();
                disp.iter_mut().zip(&n.axis).for_each(|(x, a)| *x += z * a);
            }
            for x in disp {
                let base = spec.base_std * gauss();
                h0.push(base as f32);
                hc.push((base + x) as f32);
            }
        }
        let mut s = TraceSample::new(format!("syn-{i:06}"), member, h0, hc);
        if spec.emit_surface_sections {
            let kl = (0..SURFACE_KL_LEN).map(|_| (0.1 * gauss()).abs() as f32).collect();
            let mut unit = || -> Vec<f32> {
                let mut v: Vec<f64> = (0..SURFACE_EMBED_DIM).map(|_| gauss()).collect();
                normalize(&mut v);
                v.into_iter().map(|x| x as f32).collect()
            };
            s.embeddings = Some((unit(), unit()));
            s.kl_series = Some(kl);
            s.doc_logprobs = Some(
                (0..SURFACE_DOC_TOKENS)
                    .map(|_| -(2.0 * gauss()).abs() as f32)
                    .collect(),
            );
        }
        samples.push(s);
    }

    let mut header = TraceHeader::new(spec.model_name.clone(), l, d);
    header.extractor_version = concat!("crm-synth/", env!("CARGO_PKG_VERSION")).into();
    if spec.emit_surface_sections {
        header.sections = SectionFlags {
            kl_series: true,
            texts: false,
            embeddings: Some(SURFACE_EMBED_DIM),
            token_logprobs: true,
        };
    }
    Dataset::new(header, samples)
}

/// A scalar read-out of the per-layer displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDescription {
    /// `sum_l <w_l, disp_l>`.
    Linear { terms: Vec<(usize, Vec<f64>)> },
    /// Euclidean norm of one layer's displacement.
    DisplacementNorm { layer: usize },
}

impl FeatureDescription {
    pub fn projection(dir: &LayerDirection) -> Self {
        FeatureDescription::Linear {
            terms: vec![(dir.layer, dir.vector.clone())],
        }
    }

    fn check(&self, spec: &PlantedSpec) -> Result<()> {
        let ok = match self {
            FeatureDescription::Linear { terms } => terms
                .iter()
                .all(|(l, w)| *l < spec.num_layers && w.len() == spec.hidden_dim),
            FeatureDescription::DisplacementNorm { layer } => *layer < spec.num_layers,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("feature description does not fit the planted spec"))
        }
    }

    fn evaluate(&self, disp: &[Vec<f64>]) -> f64 {
        match self {
            FeatureDescription::Linear { terms } => {
                terms.iter().map(|(l, w)| dot(&disp[*l], w)).sum()
            }
            FeatureDescription::DisplacementNorm { layer } => norm(&disp[*layer]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAuc {
    pub auc: f64,
    /// Monte Carlo standard error; `None` for the closed form.
    pub std_error: Option<f64>,
}

pub const MONTE_CARLO_DRAWS: usize = 1_000_000;

/// Population AUC of a feature under the planted model: the Gaussian closed
/// form for linear read-outs, Monte Carlo otherwise.
pub fn oracle_auc(spec: &PlantedSpec, feature: &FeatureDescription) -> Result<OracleAuc> {
    spec.validate()?;
    feature.check(spec)?;
    match feature {
        FeatureDescription::Linear { terms } => {
            let mut gap = 0.0;
            let mut var = 0.0;
            for (l, w) in terms {
                let plan = &spec.layers[*l];
                if let Some(u) = &plan.shift_axis {
                    gap += spec.layer_shift(*l) * dot(w, u);
                }
                var += spec.noise_std.powi(2) * dot(w, w);
                for n in &plan.nuisance {
                    var += (n.std * dot(w, &n.axis)).powi(2);
                }
            }
            let auc = if var == 0.0 {
                if gap > 0.0 {
                    1.0
                } else if gap < 0.0 {
                    0.0
                } else {
                    0.5
                }
            } else {
                normal_cdf(gap / (var.sqrt() * std::f64::consts::SQRT_2))
            };
            Ok(OracleAuc {
                auc,
                std_error: None,
            })
        }
        _ => oracle_auc_monte_carlo(spec, feature, MONTE_CARLO_DRAWS, spec.seed ^ 0x0_4ac1e),
    }
}

/// Monte Carlo AUC with `draws` samples per class and the Hanley-McNeil
/// standard error.
pub fn oracle_auc_monte_carlo(
    spec: &PlantedSpec,
    feature: &FeatureDescription,
    draws: usize,
    seed: u64,
) -> Result<OracleAuc> {
    spec.validate()?;
    feature.check(spec)?;
    if draws == 0 {
        return Err(invalid("draws must be positive"));
    }
    let layers: Vec<usize> = match feature {
        FeatureDescription::Linear { terms } => terms.iter().map(|(l, _)| *l).collect(),
        FeatureDescription::DisplacementNorm { layer } => vec![*layer],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.hidden_dim;
    let mut disp = vec![vec![0.0; d]; spec.num_layers];
    let mut scores = Vec::with_capacity(2 * draws);
    let mut labels = Vec::with_capacity(2 * draws);
    for member in [true, false] {
        for _ in 0..draws {
            for &l in &layers {
                let plan = &spec.layers[l];
                let row = &mut disp[l];
                for x in row.iter_mut() {
                    *x = spec.noise_std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
                if let (true, Some(u)) = (member, &plan.shift_axis) {
                    let s = spec.layer_shift(l);
                    row.iter_mut().zip(u).for_each(|(x, a)| *x += s * a);
                }
                for n in &plan.nuisance {
                    let z = n.std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                    row.iter_mut().zip(&n.axis).for_each(|(x, a)| *x += z * a);
                }
            }
            scores.push(feature.evaluate(&disp));
            labels.push(member);
        }
    }
    let auc = roc_auc(&scores, &labels)?;
    let n = draws as f64;
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let var = (auc * (1.0 - auc) + (n - 1.0) * (q1 - auc * auc) + (n - 1.0) * (q2 - auc * auc))
        / (n * n);
    Ok(OracleAuc {
        auc,
        std_error: Some(var.max(0.0).sqrt()),
    })
}

/// Adds `eps * sigma_l * N(0, 1)` to the recorded `hc` rows at `layers`,
/// where `sigma_l` is the standard deviation of all `hc` activations at that
/// layer across the dataset.
pub fn emulate_feature_noise(
    dataset: &Dataset,
    layers: &[usize],
    eps: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid("noise scale must be finite and nonnegative"));
    }
    if let Some(l) = layers.iter().find(|&&l| l >= dataset.num_layers()) {
        return Err(invalid(format!("layer {l} not in dataset")));
    }
    let mut out = dataset.clone();
    if eps == 0.0 || layers.is_empty() {
        return Ok(out);
    }
    let d = dataset.hidden_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &layer in layers {
        let vals = dataset
            .samples
            .iter()
            .flat_map(|s| s.hc_layer(layer, d).iter().map(|&v| v as f64));
        let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
        for v in vals {
            n += 1.0;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n;
        let sigma = (sq / n - mean * mean).max(0.0).sqrt();
        for s in &mut out.samples {
            for v in &mut s.hc[layer * d..(layer + 1) * d] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (*v as f64 + eps * sigma * z) as f32;
            }
        }
    }
    Ok(out)
}
