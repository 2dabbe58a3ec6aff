//! The CRMT trace container and the in-memory dataset model.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "CRMT" | u32 version | u64 header_len | header (UTF-8 JSON)
//! per sample, in header order:
//!   h0: L*d f32, layer-major
//!   hc: L*d f32, layer-major
//!   [kl_series]      u64 n | n f32
//!   [texts]          u64 n | n bytes (y0) | u64 n | n bytes (yc)
//!   [embeddings]     u64 n | n f32 (enc(y0)) | u64 n | n f32 (enc(yc))
//!   [token_logprobs] u64 n | n f32
//! ```
//!
//! Sample ids and labels live in the header so the fixed-size part of each
//! sample payload is exactly `2 * L * d * 4` bytes.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::linalg::Mat;

pub const MAGIC: [u8; 4] = *b"CRMT";
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on embedding norms.
pub const EMBEDDING_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionFlags {
    pub kl_series: bool,
    pub texts: bool,
    /// Embedding dimension when the embeddings section is present.
    pub embeddings: Option<usize>,
    pub token_logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_samples: usize,
    pub sections: SectionFlags,
    pub created_at: String,
    pub extractor_version: String,
    /// How row 0 maps onto the model, e.g. "embedding-output-first".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_indexing: Option<String>,
}

impl TraceHeader {
    pub fn new(model_name: impl Into<String>, num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            model_name: model_name.into(),
            num_layers,
            hidden_dim,
            num_samples: 0,
            sections: SectionFlags::default(),
            created_at: String::new(),
            extractor_version: String::new(),
            layer_indexing: None,
        }
    }
}

/// One document's paired last-token hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub sample_id: String,
    /// `true` for a member document.
    pub label: bool,
    /// No-context states, `L x d` layer-major.
    pub h0: Vec<f32>,
    /// With-context states, `L x d` layer-major.
    pub hc: Vec<f32>,
    pub kl_series: Option<Vec<f32>>,
    pub texts: Option<(String, String)>,
    pub embeddings: Option<(Vec<f32>, Vec<f32>)>,
    pub doc_logprobs: Option<Vec<f32>>,
}

impl TraceSample {
    pub fn new(sample_id: impl Into<String>, label: bool, h0: Vec<f32>, hc: Vec<f32>) -> Self {
        Self {
            sample_id: sample_id.into(),
            label,
            h0,
            hc,
            kl_series: None,
            texts: None,
            embeddings: None,
            doc_logprobs: None,
        }
    }

    pub fn h0_layer(&self, layer: usize, d: usize) -> &[f32] {
        &self.h0[layer * d..(layer + 1) * d]
    }

    pub fn hc_layer(&self, layer: usize, d: usize) -> &[f32] {
        &self.hc[layer * d..(layer + 1) * d]
    }

    /// `hc - h0` at one layer, in f64.
    pub fn displacement(&self, layer: usize, d: usize) -> Vec<f64> {
        self.hc_layer(layer, d)
            .iter()
            .zip(self.h0_layer(layer, d))
            .map(|(c, z)| *c as f64 - *z as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: TraceHeader,
    pub samples: Vec<TraceSample>,
}

impl Dataset {
    /// Builds a dataset, setting `num_samples` from the sample list.
    pub fn new(mut header: TraceHeader, samples: Vec<TraceSample>) -> Result<Self> {
        header.num_samples = samples.len();
        let ds = Self { header, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_layers(&self) -> usize {
        self.header.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.header.hidden_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Copy restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<_> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut header = self.header.clone();
        header.num_samples = samples.len();
        Dataset { header, samples }
    }

    /// Displacements of every sample at `layer`, one row per sample.
    pub fn layer_displacements(&self, layer: usize) -> Mat {
        let d = self.hidden_dim();
        let mut data = Vec::with_capacity(self.len() * d);
        for s in &self.samples {
            data.extend(s.displacement(layer, d));
        }
        Mat::from_vec(self.len(), d, data).expect("sample shapes validated")
    }

    /// Displacements with all `layers` concatenated per sample.
    pub fn concatenated_displacements(&self, layers: &[usize]) -> Mat {
        let d = self.hidden_dim();
        let mut data = Vec::with_capacity(self.len() * d * layers.len());
        for s in &self.samples {
            for &l in layers {
                data.extend(s.displacement(l, d));
            }
        }
        Mat::from_vec(self.len(), d * layers.len(), data).expect("sample shapes validated")
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let bad = |m: String| Err(CrmError::InvalidDataset(m));
        if h.num_layers == 0 || h.hidden_dim == 0 || h.num_samples == 0 {
            return bad("num_layers, hidden_dim and num_samples must be positive".into());
        }
        if h.num_samples != self.samples.len() {
            return bad(format!(
                "header declares {} samples, dataset holds {}",
                h.num_samples,
                self.samples.len()
            ));
        }
        if h.sections.embeddings == Some(0) {
            return bad("embedding dimension must be positive".into());
        }
        let width = h.num_layers * h.hidden_dim;
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            let id = &s.sample_id;
            if !seen.insert(id.as_str()) {
                return bad(format!("duplicate sample id {id:?}"));
            }
            if s.h0.len() != width || s.hc.len() != width {
                return bad(format!("sample {id:?}: hidden states must be {width} floats"));
            }
            if s.h0.iter().chain(&s.hc).any(|v| !v.is_finite()) {
                return bad(format!("sample {id:?}: non-finite hidden state"));
            }
            if s.kl_series.is_some() != h.sections.kl_series
                || s.texts.is_some() != h.sections.texts
                || s.embeddings.is_some() != h.sections.embeddings.is_some()
                || s.doc_logprobs.is_some() != h.sections.token_logprobs
            {
                return bad(format!("sample {id:?}: optional sections disagree with header flags"));
            }
            if let Some(kl) = &s.kl_series {
                if kl.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad(format!("sample {id:?}: KL series must be finite and nonnegative"));
                }
            }
            if let (Some((e0, ec)), Some(dim)) = (&s.embeddings, h.sections.embeddings) {
                for e in [e0, ec] {
                    if e.len() != dim {
                        return bad(format!("sample {id:?}: embedding length {} != {dim}", e.len()));
                    }
                    let n = e.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                    if (n - 1.0).abs() > EMBEDDING_NORM_TOL {
                        return bad(format!("sample {id:?}: embedding norm {n} is not unit"));
                    }
                }
            }
            if let Some(lp) = &s.doc_logprobs {
                if lp.iter().any(|v| !v.is_finite()) {
                    return bad(format!("sample {id:?}: non-finite token logprob"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    id: String,
    label: u8,
}

#[derive(Serialize, Deserialize)]
struct HeaderDoc {
    #[serde(flatten)]
    header: TraceHeader,
    samples: Vec<SampleMeta>,
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u64).to_le_bytes());
}

/// Serializes `dataset` into the CRMT container. The dataset is validated
/// before any byte reaches `sink`.
pub fn write_trace<W: Write>(dataset: &Dataset, sink: &mut W) -> Result<u64> {
    dataset.validate()?;
    let bytes = encode(dataset)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let doc = HeaderDoc {
        header: dataset.header.clone(),
        samples: dataset
            .samples
            .iter()
            .map(|s| SampleMeta {
                id: s.sample_id.clone(),
                label: s.label as u8,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&doc)?;
    let width = dataset.num_layers() * dataset.hidden_dim();
    let mut out = Vec::with_capacity(16 + header.len() + dataset.len() * width * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_len(&mut out, header.len());
    out.extend_from_slice(&header);

    for s in &dataset.samples {
        put_f32s(&mut out, &s.h0);
        put_f32s(&mut out, &s.hc);
        if let Some(kl) = &s.kl_series {
            put_len(&mut out, kl.len());
            put_f32s(&mut out, kl);
        }
        if let Some((y0, yc)) = &s.texts {
            for t in [y0, yc] {
                put_len(&mut out, t.len());
                out.extend_from_slice(t.as_bytes());
            }
        }
        if let Some((e0, ec)) = &s.embeddings {
            for e in [e0, ec] {
                put_len(&mut out, e.len());
                put_f32s(&mut out, e);
            }
        }
        if let Some(lp) = &s.doc_logprobs {
            put_len(&mut out, lp.len());
            put_f32s(&mut out, lp);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CrmError::CorruptTrace(format!(
                "truncated payload at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Length prefix, checked against what is left so a corrupt count never
    /// triggers a huge allocation.
    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > left {
            return Err(CrmError::CorruptTrace(format!(
                "section length {n} overruns payload at byte {}",
                self.pos
            )));
        }
        Ok(n as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Reads and validates a CRMT container. Trailing bytes are rejected.
pub fn read_trace<R: Read>(source: &mut R) -> Result<Dataset> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    decode(&buf)
}

fn decode(buf: &[u8]) -> Result<Dataset> {
    if buf.len() < 4 || buf[..4] != MAGIC {
        return Err(CrmError::NotATrace);
    }
    let mut cur = Cursor { buf, pos: 4 };
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CrmError::UnsupportedVersion(version));
    }
    let header_len = cur.len(1)?;
    let doc: HeaderDoc = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| CrmError::CorruptTrace(format!("unreadable header: {e}")))?;
    let header = doc.header;
    if doc.samples.len() != header.num_samples {
        return Err(CrmError::HeaderPayloadDisagreement(format!(
            "header declares {} samples but lists {}",
            header.num_samples,
            doc.samples.len()
        )));
    }
    let width = header
        .num_layers
        .checked_mul(header.hidden_dim)
        .ok_or_else(|| CrmError::CorruptTrace("layer/hidden size overflow".into()))?;
    let flags = header.sections.clone();

    let mut samples = Vec::with_capacity(doc.samples.len().min(buf.len()));
    for meta in doc.samples {
        let label = match meta.label {
            0 => false,
            1 => true,
            other => {
                return Err(CrmError::InvalidDataset(format!(
                    "sample {:?}: label {other} is not 0 or 1",
                    meta.id
                )))
            }
        };
        let h0 = cur.f32s(width)?;
        let hc = cur.f32s(width)?;
        let mut s = TraceSample::new(meta.id, label, h0, hc);
        if flags.kl_series {
            let n = cur.len(4)?;
            s.kl_series = Some(cur.f32s(n)?);
        }
        if flags.texts {
            let mut pair = Vec::with_capacity(2);
            for _ in 0..2 {
                let n = cur.len(1)?;
                let t = std::str::from_utf8(cur.take(n)?)
                    .map_err(|_| CrmError::CorruptTrace("generation text is not UTF-8".into()))?;
                pair.push(t.to_owned());
            }
            let yc = pair.pop().unwrap();
            let y0 = pair.pop().unwrap();
            s.texts = Some((y0, yc));
        }
        if let Some(dim) = flags.embeddings {
            let mut pair = Vec::with_capacity(2);
            for _ in 0..2 {
                let n = cur.len(4)?;
                if n != dim {
                    return Err(CrmError::HeaderPayloadDisagreement(format!(
                        "sample {:?}: embedding length {n}, header declares {dim}",
                        s.sample_id
                    )));
                }
                pair.push(cur.f32s(n)?);
            }
            let ec = pair.pop().unwrap();
            let e0 = pair.pop().unwrap();
            s.embeddings = Some((e0, ec));
        }
        if flags.token_logprobs {
            let n = cur.len(4)?;
            s.doc_logprobs = Some(cur.f32s(n)?);
        }
        samples.push(s);
    }
    if cur.pos != buf.len() {
        return Err(CrmError::CorruptTrace(format!(
            "{} trailing bytes after last sample",
            buf.len() - cur.pos
        )));
    }
    let ds = Dataset { header, samples };
    ds.validate()?;
    Ok(ds)
}

/// Draws a seeded, class-stratified calibration subset of `n_cal` samples.
///
/// Members receive `n_cal / 2` slots and non-members the rest; if a class is
/// too small the other class fills the gap. Returned indices are ascending.
/// The full dataset stays available for feature extraction.
pub fn split_calibration(dataset: &Dataset, n_cal: usize, seed: u64) -> Result<Vec<usize>> {
    let n = dataset.len();
    if n_cal == 0 || n_cal > n {
        return Err(CrmError::InvalidArgument(format!(
            "n_cal must be in 1..={n}, got {n_cal}"
        )));
    }
    let (mut members, mut others): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| dataset.samples[i].label);
    if members.is_empty() || others.is_empty() {
        return Err(CrmError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    members.shuffle(&mut rng);
    others.shuffle(&mut rng);

    let mut take_members = n_cal / 2;
    let mut take_others = n_cal - take_members;
    if take_members > members.len() {
        take_others += take_members - members.len();
        take_members = members.len();
    }
    if take_others > others.len() {
        take_members += take_others - others.len();
        take_others = others.len();
    }
    let mut picked: Vec<usize> = members[..take_members]
        .iter()
        .chain(&others[..take_others])
        .copied()
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, l: usize, d: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let h0 = (0..l * d).map(|k| (i * 100 + k) as f32 * 0.5).collect();
                let hc = (0..l * d).map(|k| (i * 100 + k) as f32 * 0.25 - 1.0).collect();
                TraceSample::new(format!("s{i}"), i % 2 == 0, h0, hc)
            })
            .collect();
        Dataset::new(TraceHeader::new("tiny", l, d), samples).unwrap()
    }

    fn header_len(bytes: &[u8]) -> usize {
        16 + u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize
    }

    #[test]
    fn payload_size_without_optional_sections() {
        let ds = tiny(1, 2, 3);
        let mut out = Vec::new();
        let n = write_trace(&ds, &mut out).unwrap();
        assert_eq!(n as usize, out.len());
        assert_eq!(out.len() - header_len(&out), 2 * (2 * 3) * 4);
        assert_eq!(&out[..4], b"CRMT");
        assert_eq!(u32::from_le_bytes(out[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn balanced_header_counts() {
        let ds = tiny(250, 1, 2);
        let mut out = Vec::new();
        write_trace(&ds, &mut out).unwrap();
        let back = read_trace(&mut out.as_slice()).unwrap();
        assert_eq!(back.header.num_samples, 250);
        assert_eq!(back.labels().iter().filter(|&&m| m).count(), 125);
    }

    #[test]
    fn corrupt_first_byte_is_not_a_trace() {
        let mut out = Vec::new();
        write_trace(&tiny(2, 2, 2), &mut out).unwrap();
        out[0] ^= 0xff;
        assert!(matches!(read_trace(&mut out.as_slice()), Err(CrmError::NotATrace)));
    }

    #[test]
    fn truncation_and_trailing_garbage_are_corrupt() {
        let mut out = Vec::new();
        write_trace(&tiny(2, 2, 2), &mut out).unwrap();
        let short = &out[..out.len() - 1];
        assert!(matches!(read_trace(&mut &short[..]), Err(CrmError::CorruptTrace(_))));
        let mut long = out.clone();
        long.push(0);
        assert!(matches!(read_trace(&mut long.as_slice()), Err(CrmError::CorruptTrace(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut out = Vec::new();
        write_trace(&tiny(2, 2, 2), &mut out).unwrap();
        out[4] = 2;
        assert!(matches!(
            read_trace(&mut out.as_slice()),
            Err(CrmError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn embedding_length_disagreement() {
        let mut ds = tiny(1, 1, 2);
        ds.header.sections.embeddings = Some(2);
        ds.samples[0].embeddings = Some((vec![1.0, 0.0], vec![0.0, 1.0]));
        let mut out = Vec::new();
        write_trace(&ds, &mut out).unwrap();
        // shrink the declared dim in the header; same byte length ("2" -> "3")
        let hl = header_len(&out);
        let head = std::str::from_utf8(&out[16..hl]).unwrap().replace("\"embeddings\":2", "\"embeddings\":3");
        out.splice(16..hl, head.bytes());
        assert!(matches!(
            read_trace(&mut out.as_slice()),
            Err(CrmError::HeaderPayloadDisagreement(_))
        ));
    }

    #[test]
    fn invalid_dataset_rejected_before_writing() {
        let mut ds = tiny(2, 1, 2);
        ds.samples[1].sample_id = "s0".into();
        let mut out = Vec::new();
        assert!(write_trace(&ds, &mut out).is_err());
        assert!(out.is_empty());

        let mut ds = tiny(2, 1, 2);
        ds.header.sections.kl_series = true;
        ds.samples.iter_mut().for_each(|s| s.kl_series = Some(vec![0.1, -0.2]));
        assert!(write_trace(&ds, &mut Vec::new()).is_err());
    }

    #[test]
    fn calibration_split_is_balanced_and_deterministic() {
        let ds = tiny(250, 1, 1);
        let a = split_calibration(&ds, 100, 42).unwrap();
        let b = split_calibration(&ds, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert_eq!(a.iter().filter(|&&i| ds.samples[i].label).count(), 50);

        let all = split_calibration(&ds, 250, 7).unwrap();
        assert_eq!(all, (0..250).collect::<Vec<_>>());
    }

    #[test]
    fn calibration_split_errors() {
        let ds = tiny(10, 1, 1);
        assert!(split_calibration(&ds, 11, 1).is_err());
        let mut one = tiny(4, 1, 1);
        one.samples.iter_mut().for_each(|s| s.label = true);
        assert!(matches!(split_calibration(&one, 2, 1), Err(CrmError::SingleClass)));
    }

    #[test]
    fn calibration_split_fills_from_larger_class() {
        let mut ds = tiny(10, 1, 1);
        for (i, s) in ds.samples.iter_mut().enumerate() {
            s.label = i < 2;
        }
        let cal = split_calibration(&ds, 8, 3).unwrap();
        assert_eq!(cal.iter().filter(|&&i| ds.samples[i].label).count(), 2);
        assert_eq!(cal.len(), 8);
    }
}
