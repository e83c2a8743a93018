//! Experiment driver: model builders, batch construction, per-batch
//! discovery and certified evaluation, and report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::circuit::{mean_patch_values, Circuit, CircuitFile, PatchingScheme};
use crate::discover::{discover, Algorithm, Ordering};
use crate::error::{Error, Result};
use crate::hitting::{algorithm4, Alg4Options, Alg4Status};
use crate::models::{counterexample, random_mlp, xor_toy};
use crate::net::{ComponentId, Network};
use crate::predicate::{is_monotone_certificate, Faithfulness, Outcome, Predicate, PredicateKind};
use crate::train::{argmax, train, Dataset, TrainConfig};
use crate::verify::{attack, verify, Budget, InputRegion, Metric, Status, Verdict};

/// Builder parameters; which ones matter depends on the builder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Pair count of the counterexample family.
    pub m: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub epochs: Option<usize>,
}

impl ModelParams {
    fn dims(&self) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| vec![2, 16, 2])
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dims: self.dims(),
            data_seed: seed,
            init_seed: seed,
            epochs: self.epochs.unwrap_or(TrainConfig::default().epochs),
            ..TrainConfig::default()
        }
    }
}

pub const BUILDERS: &[&str] = &["xor_toy", "counterexample", "random_mlp", "trained_mlp"];

/// Deterministic network for `(name, params, seed)`.
pub fn build_model(name: &str, params: &ModelParams, seed: u64) -> Result<Network> {
    match name {
        "xor_toy" => Ok(xor_toy()),
        "counterexample" => counterexample(params.m.unwrap_or(1)),
        "random_mlp" => random_mlp(&params.dims(), seed),
        "trained_mlp" => Ok(train(&params.train_config(seed))?.net),
        other => Err(Error::Config(format!(
            "unknown model builder {other:?} (expected one of {})",
            BUILDERS.join(", ")
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Builder name; ignored when `file` is set.
    #[serde(default)]
    pub builder: Option<String>,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub params: ModelParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSource {
    /// Held-out two-moons points, labels from the data.
    #[default]
    TwoMoons,
    /// Uniform points in a box, labels from the model's prediction.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSpec {
    pub count: usize,
    /// Points per batch.
    pub k: usize,
    pub source: BatchSource,
    /// Restrict every batch to one class; otherwise batches alternate
    /// between classes.
    pub class_filter: Option<usize>,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            count: 20,
            k: 3,
            source: BatchSource::TwoMoons,
            class_filter: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Sampling,
    InputRobust,
    PatchingRobust,
    Combined,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchChoice {
    #[default]
    Zero,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodAlgorithm {
    Greedy,
    Exhaustive,
    BinarySearch,
    /// Minimum hitting set of blocking sets.
    Mhs,
    /// No discovery: the full model.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub algorithm: MethodAlgorithm,
    pub predicate: Criterion,
    #[serde(default)]
    pub patch: PatchChoice,
    #[serde(default)]
    pub ordering: Option<Vec<ComponentId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropertySpec {
    pub metric: Metric,
    pub delta: f64,
    pub eps_in: f64,
    pub eps_patch: f64,
    pub box_patching: bool,
    pub clamp: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for PropertySpec {
    fn default() -> Self {
        Self {
            metric: Metric::LogitDiff,
            delta: 1.0,
            eps_in: 0.05,
            eps_patch: 0.06,
            box_patching: true,
            clamp: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    pub criterion: Criterion,
    pub attack: bool,
    pub attack_steps: usize,
    pub attack_restarts: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            criterion: Criterion::InputRobust,
            attack: true,
            attack_steps: 50,
            attack_restarts: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimalitySpec {
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    /// Method whose predicate the blocking sets are computed under.
    pub predicate_of: String,
}

fn default_t_max() -> usize {
    3
}

fn default_timeout() -> f64 {
    10.0
}

fn default_parallel() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Per verification call.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub batches: BatchSpec,
    #[serde(default)]
    pub property: PropertySpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub minimality: Option<MinimalitySpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.property;
        for (what, v) in [
            ("timeout_secs", self.timeout_secs),
            ("delta", p.delta),
            ("eps_in", p.eps_in),
            ("eps_patch", p.eps_patch),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{what} = {v} must be finite and >= 0"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.batches.count == 0 || self.batches.k == 0 {
            return Err(Error::Config(
                "batches.count and batches.k must be positive".into(),
            ));
        }
        if let Some(m) = &self.minimality {
            if !self.methods.iter().any(|x| x.name == m.predicate_of) {
                return Err(Error::Config(format!(
                    "minimality.predicate_of names unknown method {:?}",
                    m.predicate_of
                )));
            }
        }
        if self.model.builder.is_none() && self.model.file.is_none() {
            return Err(Error::Config("model needs a builder or a file".into()));
        }
        Ok(())
    }
}

/// The network plus the data its batches and mean patches come from.
pub struct Setup {
    pub net: Arc<Network>,
    /// Pool batches are drawn from.
    pub pool: Dataset,
    /// Samples for mean patching.
    pub reference: Vec<Vec<f64>>,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let m = &cfg.model;
    let net = match &m.file {
        Some(path) => Network::from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.display().to_string(),
                message,
            },
            e => e,
        })?,
        None => build_model(m.builder.as_deref().expect("validated"), &m.params, m.seed)?,
    };
    let (pool, reference) = match cfg.batches.source {
        BatchSource::TwoMoons => {
            let (tr, te) = m.params.train_config(m.seed).data();
            (te, tr.x.into_iter().take(100).collect())
        }
        BatchSource::Uniform { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "uniform source needs lo < hi, got [{lo}, {hi}]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xda7a);
            let mut draw = |n: usize| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| {
                        (0..net.input_dim())
                            .map(|_| rng.gen_range(lo..=hi))
                            .collect()
                    })
                    .collect()
            };
            let x = draw(400);
            let reference = draw(100);
            let y = x
                .iter()
                .map(|p| net.evaluate(p).map(|o| argmax(&o)))
                .collect::<Result<_>>()?;
            (Dataset { x, y }, reference)
        }
    };
    Ok(Setup {
        net: Arc::new(net),
        pool,
        reference,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub id: usize,
    pub points: Vec<Vec<f64>>,
    pub golds: Vec<usize>,
}

/// Same-class batches of correctly predicted pool points, classes taken in
/// turn, sampled without replacement.
pub fn make_batches(
    net: &Network,
    pool: &Dataset,
    spec: &BatchSpec,
    seed: u64,
) -> Result<Vec<Batch>> {
    let classes = net.output_dim();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, (x, y)) in pool.x.iter().zip(&pool.y).enumerate() {
        if *y < classes && argmax(&net.evaluate(x)?) == *y {
            by_class[*y].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut by_class {
        v.shuffle(&mut rng);
    }
    let order: Vec<usize> = match spec.class_filter {
        Some(c) if c < classes => vec![c],
        Some(c) => return Err(Error::Config(format!("class filter {c} out of range"))),
        None => (0..classes).filter(|c| !by_class[*c].is_empty()).collect(),
    };
    if order.is_empty() {
        return Err(Error::Config(
            "no correctly predicted points to batch".into(),
        ));
    }
    let mut next = vec![0; classes];
    let mut out = Vec::with_capacity(spec.count);
    for id in 0..spec.count {
        let c = order[id % order.len()];
        if next[c] + spec.k > by_class[c].len() {
            return Err(Error::Config(format!(
                "not enough correctly predicted points of class {c} for {} batches",
                spec.count
            )));
        }
        let idx = &by_class[c][next[c]..next[c] + spec.k];
        next[c] += spec.k;
        out.push(Batch {
            id,
            points: idx.iter().map(|&i| pool.x[i].clone()).collect(),
            golds: vec![c; spec.k],
        });
    }
    Ok(out)
}

/// The predicate of `criterion` on one batch.
pub fn batch_predicate(
    net: &Arc<Network>,
    batch: &Batch,
    criterion: Criterion,
    patch: &PatchingScheme,
    prop: &PropertySpec,
    budget: Budget,
) -> Result<Predicate> {
    let kind = match criterion {
        Criterion::Sampling => PredicateKind::Sampling {
            batch: batch.points.clone(),
            golds: batch.golds.clone(),
            metric: prop.metric,
            delta: prop.delta,
            patch: patch.clone(),
        },
        Criterion::InputRobust => PredicateKind::InputRobust {
            anchors: batch.points.clone(),
            golds: batch.golds.clone(),
            eps: prop.eps_in,
            clamp: prop.clamp.clone(),
            metric: prop.metric,
            delta: prop.delta,
            patch: patch.clone(),
        },
        Criterion::PatchingRobust => {
            let mut region = InputRegion::union(batch.points.clone(), prop.eps_patch);
            if let Some((lo, hi)) = &prop.clamp {
                region = region.with_clamp(lo.clone(), hi.clone());
            }
            PredicateKind::PatchingRobust {
                x_refs: batch.points.clone(),
                golds: batch.golds.clone(),
                patch_region: region,
                metric: prop.metric,
                delta: prop.delta,
            }
        }
        Criterion::Combined => PredicateKind::Combined {
            anchors: batch.points.clone(),
            golds: batch.golds.clone(),
            eps_in: prop.eps_in,
            eps_patch: prop.eps_patch,
            clamp: prop.clamp.clone(),
            metric: prop.metric,
            delta: prop.delta,
            box_patching: prop.box_patching,
        },
    };
    Predicate::new(Some(net.clone()), kind, budget)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub method: String,
    pub circuit: Vec<ComponentId>,
    pub size: usize,
    pub time_secs: f64,
    pub evals: usize,
    /// Certified evaluation outcome (conjunction over the batch's queries).
    pub robust: Option<Outcome>,
    pub verdicts: Vec<Verdict>,
    /// Whether the attack found a violation.
    pub attack_violation: Option<bool>,
    /// `(elapsed seconds, circuit size)` after each step.
    pub size_trace: Vec<(f64, usize)>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhsPair {
    pub batch: usize,
    pub method: String,
    pub circuit_size: usize,
    pub mhs_size: usize,
    pub mhs_status: Alg4Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub batches: usize,
    pub failed: usize,
    pub size_mean: f64,
    pub size_std: f64,
    pub time_mean: f64,
    pub time_std: f64,
    /// Percent certified among determined, non-excluded batches.
    pub robust_pct: f64,
    pub robust_se: f64,
    pub determined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub records: Vec<BatchRecord>,
    pub summaries: Vec<MethodSummary>,
    /// Batches with an inconclusive evaluation for some method; left out of
    /// every robustness percentage.
    pub excluded: Vec<usize>,
    pub mhs_pairs: Vec<MhsPair>,
    pub warnings: Vec<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunReport {
    /// Recomputes the per-method aggregates from the records.
    pub fn summarize(&mut self, methods: &[String]) {
        self.excluded = self
            .records
            .iter()
            .filter(|r| r.robust == Some(Outcome::Unknown))
            .map(|r| r.batch)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        self.summaries = methods
            .iter()
            .map(|m| {
                let recs: Vec<&BatchRecord> =
                    self.records.iter().filter(|r| &r.method == m).collect();
                let ok: Vec<&&BatchRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
                let (size_mean, size_std) =
                    mean_std(&ok.iter().map(|r| r.size as f64).collect::<Vec<_>>());
                let (time_mean, time_std) =
                    mean_std(&ok.iter().map(|r| r.time_secs).collect::<Vec<_>>());
                let det: Vec<bool> = ok
                    .iter()
                    .filter(|r| !self.excluded.contains(&r.batch))
                    .filter_map(|r| match r.robust {
                        Some(Outcome::True) => Some(true),
                        Some(Outcome::False) => Some(false),
                        _ => None,
                    })
                    .collect();
                let n = det.len() as f64;
                let p = det.iter().filter(|b| **b).count() as f64 / n;
                MethodSummary {
                    method: m.clone(),
                    batches: recs.len(),
                    failed: recs.len() - ok.len(),
                    size_mean,
                    size_std,
                    time_mean,
                    time_std,
                    robust_pct: 100.0 * p,
                    robust_se: 100.0 * (p * (1.0 - p) / n).sqrt(),
                    determined: det.len(),
                }
            })
            .collect();
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Text table with one row per method.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.name);
        let _ = writeln!(
            s,
            "{:<20} | {:>18} | {:>14} | {:>16} | {:>8}",
            "Method", "Time (s)", "Size (|C|)", "Robustness (%)", "n"
        );
        let _ = writeln!(s, "{}", "-".repeat(88));
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{:<20} | {:>8.3} ± {:>7.3} | {:>5.1} ± {:>6.1} | {:>6.1} ± {:>7.1} | {:>8}",
                m.method,
                m.time_mean,
                m.time_std,
                m.size_mean,
                m.size_std,
                m.robust_pct,
                m.robust_se,
                m.determined
            );
        }
        if !self.excluded.is_empty() {
            let _ = writeln!(s, "excluded (inconclusive evaluation): {:?}", self.excluded);
        }
        s
    }

    /// `batch method circuit_size mhs_size status` rows.
    pub fn mhs_table(&self) -> String {
        let mut s = String::from("batch\tmethod\tcircuit_size\tmhs_size\tmhs_status\n");
        for p in &self.mhs_pairs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:?}",
                p.batch, p.method, p.circuit_size, p.mhs_size, p.mhs_status
            );
        }
        s
    }

    /// `batch method elapsed size` rows.
    pub fn size_over_time(&self) -> String {
        let mut s = String::from("batch\tmethod\telapsed_secs\tsize\n");
        for r in &self.records {
            for (t, n) in &r.size_trace {
                let _ = writeln!(s, "{}\t{}\t{t}\t{n}", r.batch, r.method);
            }
        }
        s
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    net: Arc<Network>,
    budget: Budget,
    patches: [PatchingScheme; 2],
}

impl Context<'_> {
    fn patch(&self, p: PatchChoice) -> &PatchingScheme {
        &self.patches[p as usize]
    }

    fn predicate(&self, batch: &Batch, m: &MethodSpec) -> Result<Predicate> {
        batch_predicate(
            &self.net,
            batch,
            m.predicate,
            self.patch(m.patch),
            &self.cfg.property,
            self.budget,
        )
    }

    fn run_method(&self, batch: &Batch, m: &MethodSpec) -> Result<BatchRecord> {
        let pred = self.predicate(batch, m)?;
        let ordering = m
            .ordering
            .clone()
            .map_or(Ordering::ReverseTopoLex, Ordering::Explicit);
        let start = Instant::now();
        let (circuit, evals, size_trace) = match m.algorithm {
            MethodAlgorithm::None => (Circuit::full(&self.net), 0, Vec::new()),
            MethodAlgorithm::Mhs => {
                let r = algorithm4(&pred, self.alg4_options(), is_monotone_certificate(&pred))?;
                let trace = r
                    .rounds
                    .iter()
                    .map(|x| (x.elapsed_secs, x.mhs_size))
                    .collect();
                (r.circuit, r.evals, trace)
            }
            alg => {
                let alg = match alg {
                    MethodAlgorithm::Greedy => Algorithm::Greedy,
                    MethodAlgorithm::Exhaustive => Algorithm::Exhaustive,
                    _ => Algorithm::BinarySearch,
                };
                let d = discover(&pred, alg, &ordering)?;
                let trace = d
                    .trace
                    .steps
                    .iter()
                    .map(|s| (s.elapsed_secs, s.size_after))
                    .collect();
                (d.circuit, d.trace.evals, trace)
            }
        };
        let time_secs = start.elapsed().as_secs_f64();
        let (robust, verdicts, attack_violation) = self.evaluate(batch, m, &circuit)?;
        Ok(BatchRecord {
            batch: batch.id,
            method: m.name.clone(),
            size: circuit.len(),
            circuit: circuit.members().iter().copied().collect(),
            time_secs,
            evals,
            robust,
            verdicts,
            attack_violation,
            size_trace,
            error: None,
        })
    }

    fn alg4_options(&self) -> Alg4Options {
        Alg4Options {
            t_max: self.cfg.minimality.as_ref().map_or(3, |m| m.t_max),
            parallel: self.cfg.parallel,
        }
    }

    /// Certified evaluation under the configured criterion, plus an attack.
    fn evaluate(
        &self,
        batch: &Batch,
        m: &MethodSpec,
        circuit: &Circuit,
    ) -> Result<(Option<Outcome>, Vec<Verdict>, Option<bool>)> {
        let ev = &self.cfg.evaluation;
        let pred = batch_predicate(
            &self.net,
            batch,
            ev.criterion,
            self.patch(m.patch),
            &self.cfg.property,
            self.budget,
        )?;
        if ev.criterion == Criterion::Sampling {
            return Ok((Some(pred.eval(circuit)?), Vec::new(), None));
        }
        let queries = pred.queries(circuit)?;
        let mut verdicts = Vec::with_capacity(queries.len());
        let mut outcome = Outcome::True;
        for q in &queries {
            let v = verify(q, &self.budget)?;
            match Outcome::from_verdict(&v) {
                Outcome::False => outcome = Outcome::False,
                Outcome::Unknown if outcome == Outcome::True => outcome = Outcome::Unknown,
                _ => {}
            }
            verdicts.push(v);
        }
        let attacked = ev.attack.then(|| {
            queries.iter().enumerate().any(|(i, q)| {
                attack(
                    q,
                    ev.attack_steps,
                    ev.attack_restarts,
                    self.cfg.seed ^ (batch.id * 1000 + i) as u64,
                )
                .is_some()
            })
        });
        Ok((Some(outcome), verdicts, attacked))
    }

    fn run_batch(&self, batch: &Batch) -> (Vec<BatchRecord>, Vec<MhsPair>, Vec<String>) {
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        for m in &self.cfg.methods {
            records.push(self.run_method(batch, m).unwrap_or_else(|e| BatchRecord {
                batch: batch.id,
                method: m.name.clone(),
                circuit: Vec::new(),
                size: 0,
                time_secs: 0.0,
                evals: 0,
                robust: None,
                verdicts: Vec::new(),
                attack_violation: None,
                size_trace: Vec::new(),
                error: Some(e.to_string()),
            }));
        }
        let mut pairs = Vec::new();
        if let Some(ms) = &self.cfg.minimality {
            let m = self
                .cfg
                .methods
                .iter()
                .find(|m| m.name == ms.predicate_of)
                .expect("validated");
            let r = self
                .predicate(batch, m)
                .and_then(|p| algorithm4(&p, self.alg4_options(), is_monotone_certificate(&p)));
            match r {
                Ok(r) => {
                    warnings.extend(
                        r.warnings
                            .iter()
                            .map(|w| format!("batch {}: {w}", batch.id)),
                    );
                    for rec in records.iter().filter(|r| r.error.is_none()) {
                        pairs.push(MhsPair {
                            batch: batch.id,
                            method: rec.method.clone(),
                            circuit_size: rec.size,
                            mhs_size: r.circuit.len(),
                            mhs_status: r.status,
                        });
                    }
                }
                Err(e) => {
                    warnings.push(format!("batch {}: blocking-set run failed: {e}", batch.id))
                }
            }
        }
        for r in &records {
            if r.size == 0 && r.error.is_none() {
                warnings.push(format!(
                    "batch {} method {}: empty circuit (predicate holds vacuously)",
                    batch.id, r.method
                ));
            }
            if let Some(e) = &r.error {
                warnings.push(format!(
                    "batch {} method {} failed: {e}",
                    batch.id, r.method
                ));
            }
        }
        (records, pairs, warnings)
    }
}

/// Runs every method on every batch and aggregates the results. Per-batch
/// failures are recorded, not propagated.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let s = setup(cfg)?;
    let batches = make_batches(&s.net, &s.pool, &cfg.batches, cfg.seed)?;
    let mean = PatchingScheme::Mean {
        values: mean_patch_values(&s.net, &s.reference)?,
    };
    let ctx = Context {
        cfg,
        net: s.net.clone(),
        budget: Budget {
            timeout_secs: Some(cfg.timeout_secs),
            max_subproblems: None,
        },
        patches: [PatchingScheme::Zero, mean],
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = if cfg.parallel {
        use rayon::prelude::*;
        batches.par_iter().map(|b| ctx.run_batch(b)).collect()
    } else {
        batches.iter().map(|b| ctx.run_batch(b)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = batches.iter().map(|b| ctx.run_batch(b)).collect();
    let mut report = RunReport {
        name: cfg.name.clone(),
        records: Vec::new(),
        summaries: Vec::new(),
        excluded: Vec::new(),
        mhs_pairs: Vec::new(),
        warnings: Vec::new(),
    };
    for (r, p, w) in results {
        report.records.extend(r);
        report.mhs_pairs.extend(p);
        report.warnings.extend(w);
    }
    let names: Vec<String> = cfg.methods.iter().map(|m| m.name.clone()).collect();
    report.summarize(&names);
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&report, &s.net, cfg, &ctx.patches[1], dir)?;
    }
    Ok(report)
}

/// Writes the report, table, figure data and one circuit file per record.
/// `mean` is the resolved mean patch used by mean-patched methods.
pub fn write_outputs(
    report: &RunReport,
    net: &Network,
    cfg: &ExperimentConfig,
    mean: &PatchingScheme,
    dir: &Path,
) -> Result<()> {
    let circuits = dir.join("circuits");
    std::fs::create_dir_all(&circuits)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(dir.join("table.txt"), report.render_table())?;
    std::fs::write(dir.join("size_over_time.tsv"), report.size_over_time())?;
    if !report.mhs_pairs.is_empty() {
        std::fs::write(dir.join("mhs_pairs.tsv"), report.mhs_table())?;
    }
    std::fs::write(dir.join("network.json"), net.to_json())?;
    std::fs::write(
        dir.join("config.toml"),
        toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    let patches: BTreeMap<&str, PatchChoice> = cfg
        .methods
        .iter()
        .map(|m| (m.name.as_str(), m.patch))
        .collect();
    for r in report.records.iter().filter(|r| r.error.is_none()) {
        let patch = match patches.get(r.method.as_str()) {
            Some(PatchChoice::Mean) => mean.clone(),
            _ => PatchingScheme::Zero,
        };
        let file = CircuitFile::new(net, &Circuit::new(r.circuit.iter().copied()), patch);
        let mut v = serde_json::to_value(&file)?;
        v["verdicts"] = serde_json::to_value(&r.verdicts)?;
        std::fs::write(
            circuits.join(format!("batch{:03}_{}.json", r.batch, r.method)),
            serde_json::to_string_pretty(&v)?,
        )?;
    }
    Ok(())
}

/// Status of the first non-certified verdict, for messages.
pub fn first_failure(verdicts: &[Verdict]) -> Option<&Status> {
    verdicts
        .iter()
        .map(|v| &v.status)
        .find(|s| !matches!(s, Status::Certified))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(methods: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
name = "t"
seed = 1
parallel = false
[model]
builder = "trained_mlp"
seed = 0
dims = [2, 8, 2]
epochs = 200
[batches]
count = 4
k = 2
[property]
delta = 1.0
eps_in = 0.05
{methods}
"#
        ))
        .unwrap()
    }

    #[test]
    fn full_model_is_always_robust() {
        let cfg = config(
            "[[methods]]\nname = \"full\"\nalgorithm = \"none\"\npredicate = \"input_robust\"\n",
        );
        let r = run_experiment(&cfg).unwrap();
        let s = r.summary("full").unwrap();
        assert_eq!(s.robust_pct, 100.0);
        assert_eq!(s.size_mean, 8.0);
        assert_eq!(s.determined, 4);
    }

    #[test]
    fn batches_are_same_class_and_alternate() {
        let cfg = config(
            "[[methods]]\nname = \"full\"\nalgorithm = \"none\"\npredicate = \"input_robust\"\n",
        );
        let s = setup(&cfg).unwrap();
        let b = make_batches(&s.net, &s.pool, &cfg.batches, 1).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0].golds, vec![0, 0]);
        assert_eq!(b[1].golds, vec![1, 1]);
        for batch in &b {
            for (p, g) in batch.points.iter().zip(&batch.golds) {
                assert_eq!(argmax(&s.net.evaluate(p).unwrap()), *g);
            }
        }
    }

    #[test]
    fn reproducible() {
        let cfg =
            config("[[methods]]\nname = \"g\"\nalgorithm = \"greedy\"\npredicate = \"sampling\"\n");
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let sizes = |r: &RunReport| {
            r.records
                .iter()
                .map(|x| (x.batch, x.circuit.clone(), x.robust))
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(&a), sizes(&b));
    }

    #[test]
    fn unknown_builder() {
        assert!(matches!(
            build_model("resnet", &ModelParams::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_method_reference_rejected() {
        let text = r#"
name = "t"
seed = 0
[model]
builder = "xor_toy"
[[methods]]
name = "a"
algorithm = "greedy"
predicate = "sampling"
[minimality]
predicate_of = "b"
"#;
        assert!(matches!(
            ExperimentConfig::from_toml(text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn standard_error() {
        let mut r = RunReport {
            name: String::new(),
            records: Vec::new(),
            summaries: Vec::new(),
            excluded: Vec::new(),
            mhs_pairs: Vec::new(),
            warnings: Vec::new(),
        };
        for (b, o) in [
            (0, Outcome::True),
            (1, Outcome::False),
            (2, Outcome::Unknown),
            (3, Outcome::True),
        ] {
            r.records.push(BatchRecord {
                batch: b,
                method: "m".into(),
                circuit: Vec::new(),
                size: b,
                time_secs: 1.0,
                evals: 0,
                robust: Some(o),
                verdicts: Vec::new(),
                attack_violation: None,
                size_trace: Vec::new(),
                error: None,
            });
        }
        r.summarize(&["m".into()]);
        let s = r.summary("m").unwrap();
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(s.determined, 3);
        assert!((s.robust_pct - 200.0 / 3.0).abs() < 1e-9);
        let p: f64 = 2.0 / 3.0;
        assert!((s.robust_se - 100.0 * (p * (1.0 - p) / 3.0).sqrt()).abs() < 1e-9);
        assert_eq!(s.size_mean, 1.5);
    }
}
