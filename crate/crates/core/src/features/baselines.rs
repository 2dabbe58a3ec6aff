use std::collections::BTreeMap;
use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::linalg::Mat;
use crate::trace::Dataset;

/// Document-only likelihood scores: `ppl`, `zlib_ratio` (when text is given)
/// and `min_k_<K>` for each K.
pub fn likelihood_baselines(
    doc_logprobs: &[f64],
    doc_text: Option<&[u8]>,
    k_percents: &[f64],
) -> Result<BTreeMap<String, f64>> {
    let n = doc_logprobs.len();
    if n == 0 {
        return Err(CrmError::InvalidArgument("empty token logprob sequence".into()));
    }
    if let Some(k) = k_percents.iter().find(|k| !(**k > 0.0 && **k <= 100.0)) {
        return Err(CrmError::InvalidArgument(format!("K% must be in (0, 100], got {k}")));
    }
    let mut out = BTreeMap::new();
    let sum: f64 = doc_logprobs.iter().sum();
    out.insert("ppl".to_string(), (-sum / n as f64).exp());

    if let Some(text) = doc_text {
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
        enc.write_all(text)?;
        let bits = enc.finish()?.len() as f64 * 8.0;
        out.insert("zlib_ratio".to_string(), -sum / bits);
    }

    let mut sorted = doc_logprobs.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &k in k_percents {
        // guard against k * n / 100 landing a hair above an integer
        let take = ((k * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
        let take = take.min(n);
        let m = sorted[..take].iter().sum::<f64>() / take as f64;
        out.insert(format!("min_k_{}", fmt_k(k)), m);
    }
    Ok(out)
}

fn fmt_k(k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{}", k as u64)
    } else {
        format!("{k}")
    }
}

/// Raw hidden-state probe inputs (no trajectory compression).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawProbe {
    /// `[h0, hc]` at the last layer.
    FinalLayerConcat,
    /// `hc - h0` at the last layer.
    FinalLayerDiff,
    /// `[mean_l h0, mean_l hc]`.
    MeanConcat,
    /// `mean_l (hc - h0)`.
    MeanDiff,
    /// Every layer's displacement concatenated; pair with a per-block PCA
    /// transform inside cross-validation.
    AllLayerDiff,
}

pub fn raw_probe_matrix(dataset: &Dataset, probe: RawProbe) -> Mat {
    let (l, d) = (dataset.num_layers(), dataset.hidden_dim());
    let width = match probe {
        RawProbe::FinalLayerConcat | RawProbe::MeanConcat => 2 * d,
        RawProbe::FinalLayerDiff | RawProbe::MeanDiff => d,
        RawProbe::AllLayerDiff => l * d,
    };
    let mut data = Vec::with_capacity(dataset.len() * width);
    for s in &dataset.samples {
        match probe {
            RawProbe::FinalLayerConcat => {
                data.extend(s.h0_layer(l - 1, d).iter().map(|&v| v as f64));
                data.extend(s.hc_layer(l - 1, d).iter().map(|&v| v as f64));
            }
            RawProbe::FinalLayerDiff => data.extend(s.displacement(l - 1, d)),
            RawProbe::MeanConcat | RawProbe::MeanDiff => {
                let (mut m0, mut mc) = (vec![0.0; d], vec![0.0; d]);
                for layer in 0..l {
                    for (a, v) in m0.iter_mut().zip(s.h0_layer(layer, d)) {
                        *a += *v as f64 / l as f64;
                    }
                    for (a, v) in mc.iter_mut().zip(s.hc_layer(layer, d)) {
                        *a += *v as f64 / l as f64;
                    }
                }
                if probe == RawProbe::MeanConcat {
                    data.extend(m0);
                    data.extend(mc);
                } else {
                    data.extend(mc.iter().zip(&m0).map(|(c, z)| c - z));
                }
            }
            RawProbe::AllLayerDiff => {
                for layer in 0..l {
                    data.extend(s.displacement(layer, d));
                }
            }
        }
    }
    Mat::from_vec(dataset.len(), width, data).expect("width computed from header")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perplexity_of_one_half() {
        let b = likelihood_baselines(&[0.5f64.ln()], None, &[]).unwrap();
        assert_abs_diff_eq!(b["ppl"], 2.0, epsilon = 1e-12);
        assert!(!b.contains_key("zlib_ratio"));
    }

    #[test]
    fn min_k_two_smallest() {
        let lp: Vec<f64> = (1..=10).map(|i| -(i as f64)).collect();
        let b = likelihood_baselines(&lp, None, &[20.0, 10.0]).unwrap();
        assert_eq!(b["min_k_20"], -9.5);
        assert_eq!(b["min_k_10"], -10.0);
    }

    #[test]
    fn zlib_ratio_uses_compressed_bits() {
        let text = b"the same words the same words the same words";
        let lp = [-1.0, -2.0, -3.0];
        let b = likelihood_baselines(&lp, Some(text), &[]).unwrap();
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
        enc.write_all(text).unwrap();
        let bits = enc.finish().unwrap().len() as f64 * 8.0;
        assert_abs_diff_eq!(b["zlib_ratio"], 6.0 / bits, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(likelihood_baselines(&[], None, &[10.0]).is_err());
        assert!(likelihood_baselines(&[-1.0], None, &[0.0]).is_err());
        assert!(likelihood_baselines(&[-1.0], None, &[120.0]).is_err());
    }

    proptest! {
        #[test]
        fn min_k_100_is_mean(lp in proptest::collection::vec(-20.0f64..0.0, 1..200)) {
            let b = likelihood_baselines(&lp, None, &[100.0]).unwrap();
            let mut sorted = lp.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
            prop_assert_eq!(b["min_k_100"], mean);
        }
    }
}
