use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use crm_core::detect::{
    controls, cross_validate, delta_auc_report, layer_sweep, loo_ablation, make_folds, pc_rank_sweep, pca_dim_sweep,
    permutation_control, same_topic_subset, CvConfig, DeltaTable, EvaluationReport, LooTable, RankRow,
    SweepRow, Table,
};
use crm_core::features::{
    calibrate, extract_features, vocab_backproject, CalibrationArtifact, CalibrationConfig, DirectionSpec,
    FeatureConfig, FeatureLayout, FeatureTable, L2Mode, LayerScore, Level,
};
use crm_core::linalg::{principal_axes, Mat};
use crm_core::synth::{generate, PlantedSpec};
use crm_core::trace::{read_trace, write_trace, Dataset};
use crm_service::bench::{run_bench, BenchPayload};
use crm_service::{shutdown_signal, Server, ServiceConfig};
use serde::{Deserialize, Serialize};

use crate::cli::*;
use crate::config::*;

/// What a command prints: a structured value and its aligned-table form.
pub struct Output {
    pub json: serde_json::Value,
    pub text: String,
}

impl Output {
    fn new<T: Serialize>(value: &T, text: String) -> anyhow::Result<Self> {
        Ok(Output {
            json: serde_json::to_value(value)?,
            text,
        })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.text.clone(),
            Format::Json => serde_json::to_string_pretty(&self.json).expect("values serialize"),
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Output> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, &file),
        Command::Featurize(a) => cmd_featurize(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file, false),
        Command::Controls(a) => cmd_evaluate(a, &file, true),
        Command::Generate(a) => cmd_generate(a, &file),
        Command::Serve(a) => cmd_serve(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
        Command::Backproject(a) => cmd_backproject(a, &file),
    }
}

pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
    read_trace(&mut BufReader::new(f)).with_context(|| format!("reading trace {}", path.display()))
}

pub fn read_artifact(path: &Path) -> anyhow::Result<CalibrationArtifact> {
    let text = std::fs::read_to_string(path).with_context(|| format!("opening artifact {}", path.display()))?;
    CalibrationArtifact::from_json(&text).with_context(|| format!("loading artifact {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn tables_text(tables: &[Table]) -> String {
    tables.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("\n")
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrateSummary {
    pub artifact: PathBuf,
    pub fingerprint: String,
    pub selected_layers: Vec<usize>,
    pub layer_scores: Vec<f64>,
    pub direction: String,
    pub n_cal: usize,
}

fn cmd_calibrate(a: CalibrateArgs, file: &FileConfig) -> anyhow::Result<Output> {
    let trace = require(pick(a.trace, &file.trace), "--trace")?;
    let out = pick(a.out, &file.out).unwrap_or_else(|| PathBuf::from("artifact.json"));
    let direction = match pick(a.direction, &file.direction) {
        Some(s) => DirectionSpec::from_str(&s)?,
        None => DirectionSpec::Pc1,
    };
    let cfg = CalibrationConfig {
        n_cal: pick(a.n_cal, &file.n_cal).unwrap_or(DEFAULT_N_CAL),
        seed: pick(a.seed, &file.seed).unwrap_or(DEFAULT_SEED),
        threshold: pick(a.threshold, &file.threshold).unwrap_or(DEFAULT_THRESHOLD),
        direction,
        layer_score: match pick(a.layer_score, &file.layer_score) {
            Some(LayerScoreArg::Pc1Ratio) => LayerScore::Pc1ExplainedRatio,
            _ => LayerScore::TotalVarianceShare,
        },
    };
    let ds = read_dataset(&trace)?;
    let artifact = calibrate(&ds, &cfg)?;
    write_text(&out, &artifact.to_json()?)?;

    let mut t = Table::new(
        format!("Layer selection ({} of {} layers, score > {})", artifact.selected_layers.len(), artifact.num_layers, cfg.threshold),
        &["Layer", "Score", "Selected", "LTS mean", "LTS std"],
    );
    for (l, score) in artifact.layer_scores.iter().enumerate() {
        let pos = artifact.selected_layers.iter().position(|&s| s == l);
        let (m, s) = pos.map_or(("-".into(), "-".into()), |i| {
            (format!("{:.4}", artifact.lts_mean[i]), format!("{:.4}", artifact.lts_std[i]))
        });
        t.push(vec![format!("{l}"), format!("{score:.4}"), if pos.is_some() { "yes" } else { "" }.into(), m, s]);
    }
    let summary = CalibrateSummary {
        artifact: out.clone(),
        fingerprint: artifact.fingerprint.clone(),
        selected_layers: artifact.selected_layers.clone(),
        layer_scores: artifact.layer_scores.clone(),
        direction: cfg.direction.to_string(),
        n_cal: cfg.n_cal,
    };
    let text = format!("{t}\nartifact written to {} (direction {})\n", out.display(), cfg.direction);
    Output::new(&summary, text)
}

// ---------------------------------------------------------------- featurize

/// Feature matrix file written by `featurize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub layout: FeatureLayout,
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureFile {
    pub fn from_table(t: &FeatureTable) -> Self {
        FeatureFile {
            layout: t.layout.clone(),
            ids: t.ids.clone(),
            labels: t.labels.clone(),
            rows: t.rows.iter_rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Levels the trace can supply: L3 always, L1/L2 when their sections exist.
fn available_levels(ds: &Dataset) -> Vec<Level> {
    let s = &ds.header.sections;
    let mut v = Vec::new();
    if s.embeddings.is_some() {
        v.push(Level::L1);
    }
    if s.kl_series {
        v.push(Level::L2);
    }
    v.push(Level::L3);
    v
}

fn resolve_levels(flag: Option<String>, file: &FileConfig, ds: &Dataset) -> anyhow::Result<Vec<Level>> {
    match pick(flag, &file.levels) {
        Some(s) => Ok(Level::parse_list(&s)?),
        None => Ok(available_levels(ds)),
    }
}

fn feature_config(levels: &[Level], mode: Option<L2ModeArg>, file: &FileConfig) -> FeatureConfig {
    FeatureConfig {
        l2_mode: match pick(mode, &file.l2_mode) {
            Some(L2ModeArg::MeanOnly) => L2Mode::MeanOnly,
            _ => L2Mode::FiveStatistics,
        },
        ..FeatureConfig::levels(levels)
    }
}

fn cmd_featurize(a: FeaturizeArgs, file: &FileConfig) -> anyhow::Result<Output> {
    let ds = read_dataset(&require(pick(a.trace, &file.trace), "--trace")?)?;
    let artifact = read_artifact(&require(pick(a.artifact, &file.artifact), "--artifact")?)?;
    let levels = resolve_levels(a.levels, file, &ds)?;
    let table = extract_features(&ds, &artifact, &feature_config(&levels, a.l2_mode, file))?;
    let out = pick(a.out, &file.out).unwrap_or_else(|| PathBuf::from("features.json"));
    let ff = FeatureFile::from_table(&table);
    write_text(&out, &serde_json::to_string(&ff)?)?;
    let mut t = Table::new(format!("Features ({} samples)", table.len()), &["Column", "Level", "Layer"]);
    for (i, s) in table.layout.slots.iter().enumerate() {
        t.push(vec![format!("{i}: {}", s.name), s.level.to_string(), s.layer.map_or("-".into(), |l| l.to_string())]);
    }
    let summary = serde_json::json!({ "out": out, "samples": table.len(), "layout": table.layout });
    Output::new(&summary, format!("{t}\nfeatures written to {}\n", out.display()))
}

// ----------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    Permutation,
    L3Only,
    Loo,
    LayerSweep,
    PcaSweep,
    PcRank,
    SameTopic,
}

impl Control {
    pub const ALL: [Control; 7] = [
        Control::Permutation,
        Control::L3Only,
        Control::Loo,
        Control::LayerSweep,
        Control::PcaSweep,
        Control::PcRank,
        Control::SameTopic,
    ];

    pub fn parse_list(s: &str) -> anyhow::Result<Vec<Control>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if tok == "all" {
                out.extend(Self::ALL);
                continue;
            }
            out.push(serde_json::from_value(serde_json::Value::String(tok.into())).map_err(|_| {
                anyhow::anyhow!(
                    "unknown control {tok:?}; expected permutation, l3-only, loo, layer-sweep, pca-sweep, pc-rank, same-topic or all"
                )
            })?);
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

pub const PERMUTATIONS: usize = 10;
pub const PCA_SWEEP_KS: [usize; 4] = [1, 2, 4, 8];
pub const PC_RANKS: [usize; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SameTopicResult {
    pub matched_similarity: f64,
    pub random_similarity: f64,
    pub report: EvaluationReport,
}

/// Everything `evaluate` produces; written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBundle {
    pub levels: Vec<Level>,
    pub eval_set: String,
    pub artifact_fingerprint: String,
    pub report: EvaluationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l3_only: Option<EvaluationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loo: Option<LooTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_sweep: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_sweep: Option<Vec<SweepRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc_rank: Option<Vec<RankRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same_topic: Option<SameTopicResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<DeltaTable>,
    pub tables: Vec<Table>,
}

fn cmd_evaluate(a: EvaluateArgs, file: &FileConfig, all_controls: bool) -> anyhow::Result<Output> {
    let ds = read_dataset(&require(pick(a.trace, &file.trace), "--trace")?)?;
    let artifact = read_artifact(&require(pick(a.artifact, &file.artifact), "--artifact")?)?;
    let levels = resolve_levels(a.levels, file, &ds)?;
    let folds = pick(a.folds, &file.folds).unwrap_or(DEFAULT_FOLDS);
    let seed = pick(a.seed, &file.seed).unwrap_or(DEFAULT_SEED);
    let eval_set = pick(a.eval_set, &file.eval_set).unwrap_or(EvalSet::All);
    let controls = match pick(a.controls, &file.controls) {
        Some(s) => Control::parse_list(&s)?,
        None if all_controls => Control::ALL.to_vec(),
        None => Vec::new(),
    };
    let mut cv = CvConfig::default();
    if let Some(n) = pick(a.n_boot, &file.n_boot) {
        cv.n_boot = n;
    }

    let eval_idx: Vec<usize> = match eval_set {
        EvalSet::All => (0..ds.len()).collect(),
        EvalSet::HeldOut => {
            let cal: std::collections::HashSet<&str> = artifact.calibration_ids.iter().map(String::as_str).collect();
            (0..ds.len()).filter(|&i| !cal.contains(ds.samples[i].sample_id.as_str())).collect()
        }
    };
    let eval = ds.subset(&eval_idx);
    let fcfg = feature_config(&levels, a.l2_mode, file);
    let features = extract_features(&eval, &artifact, &fcfg)?;
    let labels = features.labels.clone();
    let plan = make_folds(&labels, folds, seed)?;
    let report = cross_validate(&features.rows, &labels, &plan, &cv)?.with_tag("clean");
    let level_name = levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("+");

    let mut tables = vec![controls::report_table(
        &format!("Detection ({} samples, {}-fold CV, seed {seed})", labels.len(), folds),
        &[(level_name.clone(), &report)],
    )];
    let mut bundle = EvaluationBundle {
        levels: levels.clone(),
        eval_set: format!("{eval_set:?}").to_lowercase(),
        artifact_fingerprint: artifact.fingerprint.clone(),
        report: report.clone(),
        permutation: None,
        l3_only: None,
        loo: None,
        layer_sweep: None,
        pca_sweep: None,
        pc_rank: None,
        same_topic: None,
        comparison: None,
        tables: Vec::new(),
    };

    for c in controls {
        match c {
            Control::Permutation => {
                let aucs = permutation_control(&features.rows, &labels, folds, PERMUTATIONS, seed, &cv)?;
                tables.push(controls::permutation_table(&aucs));
                bundle.permutation = Some(aucs);
            }
            Control::L3Only => {
                let l3 = features.select_levels(&[Level::L3]);
                let r = cross_validate(&l3.rows, &labels, &plan, &cv)?.with_tag("l3-only");
                let mut t = Table::new("Latent-only ablation", &["Features", "Dim", "AUC", "95% CI", "ΔAUC"]);
                for (name, rep) in [(level_name.as_str(), &report), ("L3", &r)] {
                    t.push(vec![
                        name.into(),
                        rep.n_features.to_string(),
                        crm_core::detect::table::fmt_auc(rep.mean_auc),
                        crm_core::detect::table::fmt_ci(rep.bootstrap_ci),
                        crm_core::detect::table::fmt_delta(rep.mean_auc - report.mean_auc),
                    ]);
                }
                tables.push(t);
                bundle.l3_only = Some(r);
            }
            Control::Loo => {
                let loo = loo_ablation(&features, &plan, &cv)?;
                tables.push(loo.to_table());
                bundle.loo = Some(loo);
            }
            Control::LayerSweep => {
                let rows = layer_sweep(&features, &plan, &cv)?;
                tables.push(controls::layer_sweep_table(&rows));
                bundle.layer_sweep = Some(rows);
            }
            Control::PcaSweep => {
                let x = eval.concatenated_displacements(&artifact.selected_layers);
                let rank = principal_axes(&x, 0)?.rank;
                let ks: Vec<usize> = PCA_SWEEP_KS.iter().copied().filter(|&k| k <= rank).collect();
                if ks.is_empty() {
                    bail!("PCA sweep: displacement matrix has rank 0");
                }
                let rows = pca_dim_sweep(&x, &labels, &plan, &ks, &cv)?;
                tables.push(controls::pca_sweep_table(&rows));
                bundle.pca_sweep = Some(rows);
            }
            Control::PcRank => {
                let cal = CalibrationConfig {
                    n_cal: artifact.n_cal,
                    seed: artifact.seed,
                    threshold: artifact.variance_ratio_threshold,
                    layer_score: artifact.layer_score,
                    ..CalibrationConfig::default()
                };
                let rows = pc_rank_sweep(&ds, &cal, &PC_RANKS, &eval_idx, folds, &cv)?;
                tables.push(controls::pc_rank_table(&rows));
                bundle.pc_rank = Some(rows);
            }
            Control::SameTopic => {
                let (idx, matching) = same_topic_subset(&eval, true)?;
                let sub = features.select_rows(&idx);
                let sub_plan = make_folds(&sub.labels, folds, seed)?;
                let r = cross_validate(&sub.rows, &sub.labels, &sub_plan, &cv)?.with_tag("same-topic");
                let random = random_similarity(&eval, seed)?;
                tables.push(controls::report_table(
                    &format!(
                        "Same-topic control (matched similarity {:.2} vs random {:.2})",
                        matching.mean_similarity, random
                    ),
                    &[("all pairs".into(), &report), ("same-topic".into(), &r)],
                ));
                bundle.same_topic = Some(SameTopicResult {
                    matched_similarity: matching.mean_similarity,
                    random_similarity: random,
                    report: r,
                });
            }
        }
    }

    if !a.compare.is_empty() {
        let mut runs = Vec::new();
        for spec in &a.compare {
            let (name, path) = spec
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--compare expects NAME=TRACE, got {spec:?}"))?;
            let other = read_dataset(Path::new(path))?;
            let other = other.subset(&eval_idx);
            if other.samples.iter().zip(&eval.samples).any(|(p, q)| p.sample_id != q.sample_id) {
                bail!("{name}: perturbed trace does not list the same samples in the same order");
            }
            let f = extract_features(&other, &artifact, &fcfg)?;
            runs.push((name.to_string(), cross_validate(&f.rows, &f.labels, &plan, &cv)?.with_tag(name)));
        }
        let delta = delta_auc_report(&report, &runs)?;
        tables.push(delta.to_table());
        bundle.comparison = Some(delta);
    }

    bundle.tables = tables;
    let text = tables_text(&bundle.tables);
    if let Some(dir) = pick(a.out, &file.out) {
        write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&bundle)?)?;
        write_text(&dir.join("tables.txt"), &text)?;
    }
    Output::new(&bundle, text)
}

fn random_similarity(ds: &Dataset, seed: u64) -> anyhow::Result<f64> {
    let emb = |member: bool| -> Vec<Vec<f64>> {
        ds.samples
            .iter()
            .filter(|s| s.label == member)
            .filter_map(|s| s.embeddings.as_ref())
            .map(|(_, ec)| {
                let mut v: Vec<f64> = ec.iter().map(|&x| x as f64).collect();
                crm_core::linalg::normalize(&mut v);
                v
            })
            .collect()
    };
    Ok(controls::random_pairing_similarity(&emb(true), &emb(false), seed)?)
}

// ----------------------------------------------------------------- generate

fn cmd_generate(a: GenerateArgs, file: &FileConfig) -> anyhow::Result<Output> {
    let seed = pick(a.seed, &file.seed).unwrap_or(DEFAULT_SEED);
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            PlantedSpec::from_json(&text).with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => match a.preset {
            Preset::Null => PlantedSpec::null(a.layers, a.dim, a.samples, seed),
            Preset::SingleLayer => PlantedSpec::single_layer(a.layers, a.dim, a.samples, a.shift, 1.0, seed),
            Preset::Distributed => {
                let block: Vec<usize> = (a.layers / 3..2 * a.layers / 3).collect();
                if block.is_empty() {
                    bail!("distributed preset needs at least 3 layers");
                }
                PlantedSpec::distributed(a.layers, a.dim, a.samples, block, a.shift, 1.0, 0.0, seed)
            }
        },
    };
    if a.surface {
        spec.emit_surface_sections = true;
    }
    let ds = generate(&spec)?;
    let out = pick(a.out, &file.out).unwrap_or_else(|| PathBuf::from("trace.crmt"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    let bytes = write_trace(&ds, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.spec_out {
        write_text(p, &spec.to_json()?)?;
    }
    let summary = serde_json::json!({
        "out": out,
        "bytes": bytes,
        "samples": ds.len(),
        "layers": ds.num_layers(),
        "hidden_dim": ds.hidden_dim(),
        "signal_layers": spec.signal_layers(),
    });
    let text = format!(
        "wrote {} samples ({} layers x {} dims, signal on layers {:?}) to {} ({bytes} bytes)\n",
        ds.len(),
        ds.num_layers(),
        ds.hidden_dim(),
        spec.signal_layers(),
        out.display()
    );
    Output::new(&summary, text)
}

// -------------------------------------------------------------------- serve

pub fn service_config(a: ServeArgs, file: &FileConfig) -> anyhow::Result<ServiceConfig> {
    let d = ServiceConfig::default();
    let artifact = require(pick(a.artifact, &file.artifact), "--artifact")?;
    if !artifact.is_file() {
        bail!("artifact {} does not exist", artifact.display());
    }
    Ok(ServiceConfig {
        artifact: Some(artifact),
        log: pick(a.log, &file.log).unwrap_or(d.log),
        bind: pick(a.bind, &file.bind).unwrap_or(d.bind),
        extractor_endpoint: pick(a.extractor_endpoint, &file.extractor_endpoint),
        extractor_timeout_secs: pick(a.extractor_timeout_secs, &file.extractor_timeout_secs)
            .unwrap_or(d.extractor_timeout_secs),
        z_threshold: pick(a.z_threshold, &file.z_threshold).unwrap_or(d.z_threshold),
        display_threshold: pick(a.display_threshold, &file.display_threshold).unwrap_or(d.display_threshold),
        retain_text: pick(a.retain_text, &file.retain_text).unwrap_or(d.retain_text),
    })
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn cmd_serve(a: ServeArgs, file: &FileConfig) -> anyhow::Result<Output> {
    let cfg = service_config(a, file)?;
    runtime()?.block_on(async {
        let server = Server::bind(&cfg).await?;
        let addr = server.local_addr()?;
        eprintln!("serving on http://{addr} (log {})", cfg.log.display());
        server.run(shutdown_signal()).await?;
        anyhow::Ok(())
    })?;
    Output::new(&serde_json::json!({ "status": "stopped" }), "server stopped; audit log flushed\n".into())
}

// -------------------------------------------------------------------- bench

fn cmd_bench(a: BenchArgs, file: &FileConfig) -> anyhow::Result<Output> {
    let kind: BenchPayload = a.payload.parse().map_err(anyhow::Error::msg)?;
    let seed = pick(a.seed, &file.seed).unwrap_or(DEFAULT_SEED);
    let report = runtime()?.block_on(run_bench(&a.endpoint, a.requests, kind, seed))?;
    if let Some(p) = pick(a.out, &file.out) {
        write_text(&p, &serde_json::to_string_pretty(&report)?)?;
    }
    Output::new(&report, report.to_table().to_string())
}

// -------------------------------------------------------------- backproject

#[derive(Debug, Deserialize)]
struct Unembedding {
    vocab: Vec<String>,
    unembed: Vec<Vec<f64>>,
}

fn cmd_backproject(a: BackprojectArgs, file: &FileConfig) -> anyhow::Result<Output> {
    let artifact = read_artifact(&require(pick(a.artifact, &file.artifact), "--artifact")?)?;
    let text = std::fs::read_to_string(&a.unembed).with_context(|| format!("reading {}", a.unembed.display()))?;
    let u: Unembedding = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.unembed.display()))?;
    let layer = a.layer.unwrap_or(artifact.selected_layers[0]);
    let dir = artifact
        .directions
        .iter()
        .find(|d| d.layer == layer)
        .ok_or_else(|| anyhow::anyhow!("layer {layer} is not among the selected layers {:?}", artifact.selected_layers))?;
    let m = Mat::from_rows(&u.unembed)?;
    let top = vocab_backproject(dir, &m, &u.vocab, a.top_k)?;
    let mut t = Table::new(format!("Top tokens along the layer {layer} direction"), &["Rank", "Token", "Index", "Score"]);
    for (i, s) in top.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), s.token.clone(), s.index.to_string(), format!("{:.4}", s.score)]);
    }
    Output::new(&top, t.to_string())
}
