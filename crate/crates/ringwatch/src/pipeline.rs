//! Pipeline stages over a data directory.
//!
//! ```text
//! <data>/corpus.ndjson                 simulate
//! <data>/scenario.json                 simulate (ring ground truth)
//! <data>/split.json                    train
//! <data>/models/<method>.rwnet         train
//! <data>/thresholds/<method>.json      calibrate
//! <data>/reports/eval.{txt,json}       eval
//! <data>/reports/audit.{txt,json}      audit
//! <data>/reports/backfill.{ndjson,json} backfill
//! <data>/manifests/<stage>.json        every stage
//! <data>/store/                        serve
//! ```
//!
//! Each stage checks its inputs against the manifests of the stages that
//! produced them before doing any work, and stages its outputs so a failure
//! leaves nothing half-written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ringwatch_core::detect::{Detector, DetectorConfig};
use ringwatch_core::eval::{evaluate, fairness_audit, rate_at_or_above, split_scores, GroupBy, Threshold};
use ringwatch_core::experiment::{calibrate_on, score_pairs, split_corpus, split_pairs, train_for, ExperimentConfig, SplitConfig};
use ringwatch_core::methods::{Method, SessionScorer};
use ringwatch_core::nn::Network;
use ringwatch_core::sampling::{CorpusSplit, PairLabel, SessionPair, SplitName};
use ringwatch_core::session::{SessionRecord, ValidationPolicy};
use ringwatch_core::synth::{gen_ring_corpus, GeneratorConfig, RingScenario};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::{file_sha256, verify_inputs, write_manifest, ArtifactDigest, Outputs, RunManifest, MANIFEST_SCHEMA_VERSION};
use crate::document::{corpus_bytes, read_corpus};
use crate::error::{Error, Result};
use crate::model_file::{encode_model, load_model};
use crate::replay::{chronological, ring_stats, RingReplayStats};
use crate::report::{FairnessDocument, MethodsReport};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const THRESHOLD_SCHEMA: &str = "ringwatch/threshold/v1";
pub const SPLIT_SCHEMA: &str = "ringwatch/split/v1";
pub const BACKFILL_SCHEMA: &str = "ringwatch/report/backfill/v1";
pub const TOOL_VERSION: &str = concat!("ringwatch ", env!("CARGO_PKG_VERSION"));

/// Everything a pipeline run depends on besides file locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub generator: GeneratorConfig,
    pub experiment: ExperimentConfig,
    /// Methods trained, calibrated and evaluated.
    pub methods: Vec<Method>,
    /// Method used by audit, backfill and serve.
    pub audit_method: Method,
    pub group_by: Vec<GroupBy>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            generator: GeneratorConfig::default(),
            experiment: ExperimentConfig::default(),
            methods: Method::ALL.to_vec(),
            audit_method: Method::DeepCombined,
            group_by: vec![GroupBy::Gender, GroupBy::AgeBand, GroupBy::Region],
        }
    }
}

fn merge(base: &mut Value, overlay: &Value, at: &str) -> Result<()> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(Error::Config(format!("unknown config field {path}"))),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

impl PipelineConfig {
    /// `overlay` replaces fields of `self` key by key; nested objects merge
    /// recursively and unknown keys are rejected.
    pub fn merged(&self, overlay: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).map_err(|e| Error::Runtime(e.to_string()))?;
        merge(&mut base, overlay, "")?;
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a config document (JSON with a `schema_version` field) over
    /// `self`.
    pub fn with_document(&self, bytes: &[u8]) -> Result<Self> {
        let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("config document: {e}")))?;
        match doc.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(CONFIG_SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Config(format!("config schema_version {v}, expected {CONFIG_SCHEMA_VERSION}"))),
            None => return Err(Error::Config("config document lacks schema_version".into())),
        }
        let cfg = self.merged(&doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        let x = &self.experiment;
        if !(x.fpr_target > 0.0 && x.fpr_target < 1.0) {
            return Err(Error::Config(format!("fpr_target {} outside (0, 1)", x.fpr_target)));
        }
        if x.eval_pairs == 0 || self.methods.is_empty() || self.group_by.is_empty() {
            return Err(Error::Config("eval_pairs, methods and group_by must be non-empty".into()));
        }
        let (a, b, c) = x.split.ratios;
        if [a, b, c].iter().any(|r| !(*r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must be positive and sum to 1".into()));
        }
        Ok(())
    }
}

/// Artifact locations under a data directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub data: PathBuf,
}

impl Layout {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self { data: data.into() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.data.join("corpus.ndjson")
    }
    pub fn scenario(&self) -> PathBuf {
        self.data.join("scenario.json")
    }
    pub fn split(&self) -> PathBuf {
        self.data.join("split.json")
    }
    pub fn model(&self, m: Method) -> PathBuf {
        self.data.join("models").join(format!("{}.rwnet", m.as_str()))
    }
    pub fn threshold(&self, m: Method) -> PathBuf {
        self.data.join("thresholds").join(format!("{}.json", m.as_str()))
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.data.join("reports").join(format!("{name}.txt"))
    }
    pub fn store(&self) -> PathBuf {
        self.data.join("store")
    }
}

/// One invocation: where artifacts live, the effective config, and the
/// optional explicit paths from the command line.
#[derive(Clone, Debug)]
pub struct StageContext {
    pub layout: Layout,
    pub config: PipelineConfig,
    pub model: Option<PathBuf>,
    pub threshold_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub command: Vec<String>,
}

impl StageContext {
    pub fn new(data: impl Into<PathBuf>, config: PipelineConfig) -> Self {
        Self { layout: Layout::new(data), config, model: None, threshold_file: None, out: None, command: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub schema: String,
    pub config: SplitConfig,
    pub split: CorpusSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub schema: String,
    pub method: Method,
    pub threshold: Threshold,
    /// Share of calibration negatives at or above the threshold.
    pub validation_fpr: f64,
    /// Calibration pairs that could not be scored.
    pub skipped_pairs: usize,
    /// Digest of the model file the threshold was calibrated for.
    pub model_sha256: Option<String>,
    pub corpus_sha256: String,
    pub pair_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackfillSummary {
    pub schema: String,
    pub method: Method,
    pub threshold: f64,
    pub sessions: usize,
    pub unusable: usize,
    pub flagged: usize,
    /// Present when the corpus came with generator ground truth.
    pub ring: Option<RingReplayStats>,
}

fn config_err(e: ringwatch_core::Error) -> Error {
    Error::Config(e.to_string())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn finish(
    stage: &str,
    ctx: &StageContext,
    started: Instant,
    inputs: Vec<ArtifactDigest>,
    outputs: Outputs,
    seeds: BTreeMap<String, u64>,
) -> Result<RunManifest> {
    let outputs = outputs.commit()?;
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        stage: stage.into(),
        command: ctx.command.clone(),
        config: serde_json::to_value(&ctx.config).map_err(|e| Error::Runtime(e.to_string()))?,
        seeds,
        inputs,
        outputs,
        tool_version: TOOL_VERSION.into(),
        duration_ms: started.elapsed().as_millis() as u64,
    };
    write_manifest(&ctx.layout.data, &manifest)?;
    Ok(manifest)
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn simulate(ctx: &StageContext) -> Result<RunManifest> {
    let started = Instant::now();
    let g = &ctx.config.generator;
    g.validate().map_err(config_err)?;
    let (sessions, scenario) = gen_ring_corpus(g).map_err(config_err)?;
    let mut out = Outputs::new(&ctx.layout.data);
    out.write(&ctx.layout.corpus(), &corpus_bytes(&sessions))?;
    out.write_json(&ctx.layout.scenario(), &scenario)?;
    let population = g.population_seed.unwrap_or(g.seed);
    finish("simulate", ctx, started, Vec::new(), out, seeds(&[("generator", g.seed), ("population", population)]))
}

fn deep_methods(methods: &[Method]) -> Vec<Method> {
    methods.iter().copied().filter(|m| m.feature_set().is_some()).collect()
}

/// Trains every deep method in the config on the training users. With
/// `ctx.model` set, exactly one deep method must be configured and its model
/// is written there.
pub fn train(ctx: &StageContext) -> Result<RunManifest> {
    let started = Instant::now();
    let x = &ctx.config.experiment;
    let methods = deep_methods(&ctx.config.methods);
    let targets: Vec<(Method, PathBuf)> = match (&ctx.model, methods.as_slice()) {
        (Some(p), [m]) => vec![(*m, p.clone())],
        (Some(_), _) => return Err(Error::Config("--model needs exactly one deep method in the config".into())),
        (None, []) => return Err(Error::Config("no deep method configured".into())),
        (None, ms) => ms.iter().map(|&m| (m, ctx.layout.model(m))).collect(),
    };
    let inputs = verify_inputs(&ctx.layout.data, &[ctx.layout.corpus()])?;
    let sessions = read_corpus(&ctx.layout.corpus())?;
    let split = split_corpus(&sessions, &x.split)?;
    let train_sessions = split.sessions(SplitName::Train, &sessions);

    // independent networks, one thread each; every run is seeded on its own
    let trained: Vec<Result<Network>> = std::thread::scope(|scope| {
        let handles: Vec<_> = targets
            .iter()
            .map(|(m, _)| {
                let set = m.feature_set().expect("deep method");
                let train_sessions = &train_sessions;
                scope.spawn(move || Ok(train_for(set, train_sessions, &x.policy, x.net_seed, &x.train)?.network))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Runtime("training thread panicked".into())))).collect()
    });

    let mut out = Outputs::new(&ctx.layout.data);
    for ((_, path), net) in targets.iter().zip(trained) {
        out.write(path, &encode_model(&net?))?;
    }
    out.write_json(&ctx.layout.split(), &SplitFile { schema: SPLIT_SCHEMA.into(), config: x.split.clone(), split })?;
    let s = seeds(&[("net", x.net_seed), ("train", x.train.seed), ("split", x.split.seed)]);
    finish("train", ctx, started, inputs, out, s)
}

/// A method together with the files that back it.
struct Selected {
    method: Method,
    model: Option<PathBuf>,
    threshold: PathBuf,
}

fn method_of_model(path: &Path) -> Result<Method> {
    let net = load_model(path)?;
    let set = net
        .feature_set()
        .ok_or_else(|| Error::Config(format!("{}: input dim {} matches no feature set", path.display(), net.config.input_dim)))?;
    Ok(Method::for_feature_set(set))
}

fn select_for_calibration(ctx: &StageContext) -> Result<Vec<Selected>> {
    if let Some(model) = &ctx.model {
        let method = method_of_model(model)?;
        let threshold = ctx.threshold_file.clone().unwrap_or_else(|| ctx.layout.threshold(method));
        return Ok(vec![Selected { method, model: Some(model.clone()), threshold }]);
    }
    let methods = &ctx.config.methods;
    if ctx.threshold_file.is_some() && methods.len() != 1 {
        return Err(Error::Config("--threshold-file needs --model or exactly one configured method".into()));
    }
    Ok(methods
        .iter()
        .map(|&m| Selected {
            method: m,
            model: m.feature_set().map(|_| ctx.layout.model(m)),
            threshold: ctx.threshold_file.clone().unwrap_or_else(|| ctx.layout.threshold(m)),
        })
        .collect())
}

/// The methods a consuming stage works on: the one named by an explicit
/// threshold file, or `methods` with the default layout.
fn select_calibrated(ctx: &StageContext, methods: &[Method]) -> Result<Vec<Selected>> {
    if let Some(t) = &ctx.threshold_file {
        let tf: ThresholdFile = read_json(t)?;
        let model = tf.method.feature_set().map(|_| ctx.model.clone().unwrap_or_else(|| ctx.layout.model(tf.method)));
        return Ok(vec![Selected { method: tf.method, model, threshold: t.clone() }]);
    }
    if let Some(m) = &ctx.model {
        let method = method_of_model(m)?;
        return Ok(vec![Selected { method, model: Some(m.clone()), threshold: ctx.layout.threshold(method) }]);
    }
    Ok(methods
        .iter()
        .map(|&m| Selected { method: m, model: m.feature_set().map(|_| ctx.layout.model(m)), threshold: ctx.layout.threshold(m) })
        .collect())
}

fn scorer_for(method: Method, model: Option<&Path>, policy: ValidationPolicy) -> Result<SessionScorer> {
    match (method.feature_set(), model) {
        (None, _) => Ok(SessionScorer::ttest(policy)),
        (Some(set), Some(path)) => {
            let net = load_model(path)?;
            if net.feature_set() != Some(set) {
                return Err(Error::Config(format!(
                    "{} has input dim {}, {} needs {}",
                    path.display(),
                    net.config.input_dim,
                    method.as_str(),
                    set.dim()
                )));
            }
            Ok(SessionScorer::deep(net, policy)?)
        }
        (Some(_), None) => Err(Error::Config(format!("{} needs a model file", method.as_str()))),
    }
}

/// A calibrated scorer whose threshold file, model and corpus agree.
pub struct Calibrated {
    pub method: Method,
    pub scorer: SessionScorer,
    pub threshold: ThresholdFile,
    pub model_sha256: Option<String>,
}

fn load_calibrated(sel: &Selected, corpus_sha256: Option<&str>, policy: ValidationPolicy) -> Result<Calibrated> {
    let tf: ThresholdFile = read_json(&sel.threshold)?;
    if tf.schema != THRESHOLD_SCHEMA {
        return Err(Error::Config(format!("{}: schema {:?}", sel.threshold.display(), tf.schema)));
    }
    if tf.method != sel.method {
        return Err(Error::Config(format!(
            "{} is calibrated for {}, not {}",
            sel.threshold.display(),
            tf.method.as_str(),
            sel.method.as_str()
        )));
    }
    let model_sha256 = sel.model.as_deref().map(file_sha256).transpose()?;
    if tf.model_sha256 != model_sha256 {
        return Err(Error::Config(format!(
            "{} was calibrated for model {}, got {}",
            sel.threshold.display(),
            tf.model_sha256.as_deref().unwrap_or("none"),
            model_sha256.as_deref().unwrap_or("none")
        )));
    }
    if let Some(c) = corpus_sha256 {
        if tf.corpus_sha256 != c {
            return Err(Error::Config(format!("{} was calibrated on a different corpus", sel.threshold.display())));
        }
    }
    let scorer = scorer_for(sel.method, sel.model.as_deref(), policy)?;
    Ok(Calibrated { method: sel.method, scorer, threshold: tf, model_sha256 })
}

/// Loads the scorer and threshold a detector should run with.
pub fn load_detection_scorer(ctx: &StageContext) -> Result<Calibrated> {
    let sel = select_calibrated(ctx, &[ctx.config.audit_method])?;
    load_calibrated(&sel[0], None, ctx.config.experiment.policy)
}

struct Prepared {
    sessions: Vec<SessionRecord>,
    split: CorpusSplit,
    corpus_sha256: String,
}

fn prepare(ctx: &StageContext, extra_inputs: &[PathBuf]) -> Result<(Prepared, Vec<ArtifactDigest>)> {
    let mut paths = vec![ctx.layout.corpus(), ctx.layout.split()];
    paths.extend_from_slice(extra_inputs);
    let inputs = verify_inputs(&ctx.layout.data, &paths)?;
    let corpus_sha256 = inputs[0].sha256.clone();
    let split: SplitFile = read_json(&ctx.layout.split())?;
    let sessions = read_corpus(&ctx.layout.corpus())?;
    Ok((Prepared { sessions, split: split.split, corpus_sha256 }, inputs))
}

fn pairs(p: &Prepared, x: &ExperimentConfig) -> Result<(Vec<SessionPair>, Vec<SessionPair>)> {
    Ok(split_pairs(&p.sessions, &p.split, x)?)
}

/// Runs `f` once per item on scoped threads, keeping input order.
fn parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.iter().map(|it| scope.spawn(|| f(it))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Runtime("worker thread panicked".into()))))
            .collect()
    })
}

pub fn calibrate(ctx: &StageContext) -> Result<RunManifest> {
    let started = Instant::now();
    let x = &ctx.config.experiment;
    let selected = select_for_calibration(ctx)?;
    let models: Vec<PathBuf> = selected.iter().filter_map(|s| s.model.clone()).collect();
    let (p, inputs) = prepare(ctx, &models)?;
    let scorers: Vec<SessionScorer> =
        selected.iter().map(|s| scorer_for(s.method, s.model.as_deref(), x.policy)).collect::<Result<_>>()?;
    let (val, _) = pairs(&p, x)?;
    let val_sessions = p.split.sessions(SplitName::Validation, &p.sessions);

    let files = parallel(&selected.iter().zip(&scorers).collect::<Vec<_>>(), |(sel, scorer)| {
        let summary = score_pairs(*scorer, &val_sessions, &val)?;
        let threshold = calibrate_on(&summary.scored, x.fpr_target, sel.method.as_str())?;
        let (_, neg) = split_scores(&summary.scored);
        Ok(ThresholdFile {
            schema: THRESHOLD_SCHEMA.into(),
            method: sel.method,
            validation_fpr: rate_at_or_above(&neg, threshold.value),
            threshold,
            skipped_pairs: summary.skipped,
            model_sha256: sel.model.as_deref().map(file_sha256).transpose()?,
            corpus_sha256: p.corpus_sha256.clone(),
            pair_seed: x.pair_seed,
        })
    })?;
    let mut out = Outputs::new(&ctx.layout.data);
    for (sel, tf) in selected.iter().zip(&files) {
        out.write_json(&sel.threshold, tf)?;
    }
    finish("calibrate", ctx, started, inputs, out, seeds(&[("pairs", x.pair_seed)]))
}

fn calibrated_inputs(selected: &[Selected]) -> Vec<PathBuf> {
    selected.iter().flat_map(|s| std::iter::once(s.threshold.clone()).chain(s.model.clone())).collect()
}

/// Evaluates every configured method on the test pairs at its calibrated
/// threshold.
pub fn eval(ctx: &StageContext) -> Result<(RunManifest, MethodsReport)> {
    let started = Instant::now();
    let x = &ctx.config.experiment;
    let selected = select_calibrated(ctx, &ctx.config.methods)?;
    let (p, inputs) = prepare(ctx, &calibrated_inputs(&selected))?;
    let calibrated: Vec<Calibrated> =
        selected.iter().map(|s| load_calibrated(s, Some(&p.corpus_sha256), x.policy)).collect::<Result<_>>()?;
    let (_, test) = pairs(&p, x)?;
    let test_sessions = p.split.sessions(SplitName::Test, &p.sessions);
    let rows = parallel(&calibrated, |c| {
        let summary = score_pairs(&c.scorer, &test_sessions, &test)?;
        Ok((evaluate(c.method.as_str(), &summary.scored, c.threshold.threshold.value)?, summary.skipped))
    })?;
    let (rows, skipped): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let report = MethodsReport::new(rows, skipped);
    let text_path = ctx.out.clone().unwrap_or_else(|| ctx.layout.report("eval"));
    let mut out = Outputs::new(&ctx.layout.data);
    out.write(&text_path, report.to_text().as_bytes())?;
    out.write_json(&text_path.with_extension("json"), &report)?;
    let manifest = finish("eval", ctx, started, inputs, out, seeds(&[("pairs", x.pair_seed)]))?;
    Ok((manifest, report))
}

/// Per-group true negative rates of the audit method on the test negatives.
pub fn audit(ctx: &StageContext) -> Result<(RunManifest, FairnessDocument)> {
    let started = Instant::now();
    let x = &ctx.config.experiment;
    let selected = select_calibrated(ctx, &[ctx.config.audit_method])?;
    let (p, inputs) = prepare(ctx, &calibrated_inputs(&selected))?;
    let c = load_calibrated(&selected[0], Some(&p.corpus_sha256), x.policy)?;
    let (_, test) = pairs(&p, x)?;
    let negatives: Vec<SessionPair> = test.into_iter().filter(|q| q.label == PairLabel::Negative).collect();
    let test_sessions = p.split.sessions(SplitName::Test, &p.sessions);
    let summary = score_pairs(&c.scorer, &test_sessions, &negatives)?;
    let report = fairness_audit(&summary.scored, c.threshold.threshold.value, &ctx.config.group_by)?;
    let doc = FairnessDocument::new(c.method.as_str(), report);
    let text_path = ctx.out.clone().unwrap_or_else(|| ctx.layout.report("audit"));
    let mut out = Outputs::new(&ctx.layout.data);
    out.write(&text_path, doc.to_text().as_bytes())?;
    out.write_json(&text_path.with_extension("json"), &doc)?;
    let manifest = finish("audit", ctx, started, inputs, out, seeds(&[("pairs", x.pair_seed)]))?;
    Ok((manifest, doc))
}

/// Replays the whole corpus through a fresh detector in start-time order
/// and writes every flag it raises.
pub fn backfill(ctx: &StageContext) -> Result<(RunManifest, BackfillSummary)> {
    let started = Instant::now();
    let selected = select_calibrated(ctx, &[ctx.config.audit_method])?;
    let scenario_path = ctx.layout.scenario();
    let mut paths = vec![ctx.layout.corpus()];
    paths.extend(calibrated_inputs(&selected));
    if scenario_path.exists() {
        paths.push(scenario_path.clone());
    }
    let inputs = verify_inputs(&ctx.layout.data, &paths)?;
    let c = load_calibrated(&selected[0], None, ctx.config.experiment.policy)?;
    let sessions = read_corpus(&ctx.layout.corpus())?;
    let scenario: Option<RingScenario> = scenario_path.exists().then(|| read_json(&scenario_path)).transpose()?;

    let threshold = c.threshold.threshold.value;
    let mut det = Detector::new(c.scorer, DetectorConfig { threshold, window_ms: None })?;
    let outcomes = crate::replay::replay(&mut det, &sessions)?;
    let mut flags = Vec::new();
    for s in chronological(&sessions) {
        if let Some(f) = det.flag(&s.session_id) {
            flags.extend(serde_json::to_vec(f).map_err(|e| Error::Runtime(e.to_string()))?);
            flags.push(b'\n');
        }
    }
    let summary = BackfillSummary {
        schema: BACKFILL_SCHEMA.into(),
        method: c.method,
        threshold,
        sessions: outcomes.len(),
        unusable: outcomes.iter().filter(|o| !o.usable).count(),
        flagged: outcomes.iter().filter(|o| o.flagged).count(),
        ring: scenario.map(|sc| ring_stats(&outcomes, &sessions, &sc)),
    };
    let flags_path = ctx.out.clone().unwrap_or_else(|| ctx.layout.data.join("reports").join("backfill.ndjson"));
    let mut out = Outputs::new(&ctx.layout.data);
    out.write(&flags_path, &flags)?;
    out.write_json(&flags_path.with_extension("json"), &summary)?;
    let manifest = finish("backfill", ctx, started, inputs, out, BTreeMap::new())?;
    Ok((manifest, summary))
}

/// simulate, train, calibrate, eval and audit in sequence.
pub fn run_pipeline(ctx: &StageContext) -> Result<Vec<RunManifest>> {
    ctx.config.validate()?;
    let mut stage = ctx.clone();
    stage.model = None;
    stage.threshold_file = None;
    stage.out = None;
    Ok(vec![simulate(&stage)?, train(&stage)?, calibrate(&stage)?, eval(&stage)?.0, audit(&stage)?.0])
}
