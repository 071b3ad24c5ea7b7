//! Declarative experiment runs: config in, CSV tables and a JSON summary out.
//!
//! Replicate `r` (1-based) of an experiment draws from
//! `stream(master_seed, <experiment name>, r)`, and replicate outputs are
//! reduced in replicate order, so files do not depend on the worker count.
//! Every CSV starts with `# config_sha256=<hex>`, the SHA-256 of the compact
//! JSON config echo (which leaves out `workers` and `output_dir`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::budget::Budget;
use crate::ensembles::{Ensemble, EnsembleSpec};
use crate::error::{Error, Result};
use crate::fk::{fk_class_table, fk_syllabify, Word};
use crate::fluctuations::{fluctuation_experiment, SpikedSpec};
use crate::linear_ensemble::{check_q_conditions, QFamily, QThresholds};
use crate::pool::{map_replicates, Workers};
use crate::rng::stream;
use crate::spectral::{eigen_sym, esd_compare, histogram, largest_eigenvalue, HistogramSpec};
use crate::stats::mean_var;
use crate::wick::{exact_trace_moment, matching_case_audit, normalized_trace_power, wick_expectation, word_factors, MomentMethod};

/// Spike strength, given directly or as `coef * n^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coef: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_const: Option<f64>,
}

impl SpikeConfig {
    pub fn lambda_for(&self, n: usize) -> Result<f64> {
        match (self.lambda, self.exponent) {
            (Some(l), None) if self.coef.is_none() => Ok(l),
            (None, Some(e)) => Ok(self.coef.unwrap_or(1.0) * (n as f64).powf(e)),
            _ => Err(Error::invalid("spike", "give either lambda or exponent (with optional coef)")),
        }
    }

    pub fn spiked(&self, base: &EnsembleSpec) -> Result<SpikedSpec> {
        let s = SpikedSpec {
            base: base.clone(),
            lambda: self.lambda_for(base.n())?,
            d_const: self.d_const,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub model: EnsembleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike: Option<SpikeConfig>,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Workers,
    pub output_dir: PathBuf,
    /// Experiment-specific parameters; unknown keys are rejected by the experiment.
    #[serde(default)]
    pub params: Map<String, Value>,
}

/// The part of a config that determines the output: everything but `workers` and `output_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub experiment: String,
    pub model: EnsembleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike: Option<SpikeConfig>,
    pub reps: usize,
    pub master_seed: u64,
    pub params: Map<String, Value>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            experiment: self.experiment.clone(),
            model: self.model.clone(),
            spike: self.spike.clone(),
            reps: self.reps,
            master_seed: self.master_seed,
            params: self.params.clone(),
        }
    }

    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(&self.echo()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self, registry: &ExperimentRegistry) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps", "must be at least 1"));
        }
        let exp = registry.get(&self.experiment).ok_or_else(|| {
            Error::invalid(
                "experiment",
                format!("unknown experiment {:?}; known: {}", self.experiment, registry.names().join(", ")),
            )
        })?;
        self.model.build()?;
        if exp.needs_spike() && self.spike.is_none() {
            return Err(Error::invalid("spike", format!("required by experiment {}", self.experiment)));
        }
        if let Some(s) = &self.spike {
            s.spiked(&self.model)?;
        }
        Ok(())
    }
}

/// One CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem, e.g. `samples` for `samples.csv`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// RFC 4180 with LF line endings, preceded by the config hash comment.
    pub fn to_csv(&self, config_hash: &str) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(format!("# config_sha256={config_hash}\n{}", String::from_utf8(body).expect("utf-8")))
    }
}

/// Number formatting used in every table: shortest round-trip decimal.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: Value,
    pub tables: Vec<Table>,
}

pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub model: &'a dyn Ensemble,
    pub budget: &'a Budget,
}

impl RunContext<'_> {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    /// Typed view of `params`; unknown keys are rejected by `P`.
    pub fn params<P: serde::de::DeserializeOwned>(&self) -> Result<P> {
        serde_json::from_value(Value::Object(self.config.params.clone()))
            .map_err(|e| Error::invalid("params", e))
    }

    /// `f(r, stream(master_seed, tag, r))` over `r = 1..=reps`, in order.
    pub fn replicates<T: Send>(
        &self,
        tag: &str,
        f: impl Fn(u64, &mut crate::rng::RngStream) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        let seed = self.config.master_seed;
        map_replicates(self.config.reps, self.config.workers, |r| {
            let mut rng = stream(seed, tag, r);
            f(r, &mut rng)
        })
    }

    /// `λ₁(n^{-1/2} X)` per replicate.
    pub fn top_eigenvalues(&self, tag: &str) -> Result<Vec<f64>> {
        self.replicates(tag, |_, rng| largest_eigenvalue(&self.model.sample(rng), true))
    }
}

/// A named experiment.
pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    fn needs_spike(&self) -> bool {
        false
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput>;
}

/// Name → experiment.
pub struct ExperimentRegistry {
    entries: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        ExperimentRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(EdgeHistogram));
        r.register(Box::new(Esd));
        r.register(Box::new(TwScaling));
        r.register(Box::new(Fluct));
        r.register(Box::new(MomentsCheck));
        r.register(Box::new(FkAudit));
        r.register(Box::new(RadCheck));
        r
    }

    pub fn register(&mut self, e: Box<dyn Experiment>) {
        self.entries.insert(e.name(), e);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Experiment> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config_echo: ExperimentConfig,
    pub summary: Value,
    pub artifacts: Vec<PathBuf>,
    pub wall_time: f64,
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Validates `config`, runs it, and writes its tables and `summary.json` into `output_dir`.
pub fn run(config: &ExperimentConfig, registry: &ExperimentRegistry, budget: &Budget) -> Result<RunResult> {
    let start = Instant::now();
    config.validate(registry)?;
    let exp = registry.get(&config.experiment).expect("validated");
    let model = config.model.build()?;
    let ctx = RunContext {
        config,
        model: model.as_ref(),
        budget,
    };
    let out = exp.run(&ctx)?;

    fs::create_dir_all(&config.output_dir)?;
    let hash = config.config_hash();
    let mut artifacts = Vec::new();
    let mut names = Vec::new();
    for t in &out.tables {
        let file = format!("{}.csv", t.name);
        let path = config.output_dir.join(&file);
        fs::write(&path, t.to_csv(&hash)?)?;
        artifacts.push(path);
        names.push(file);
    }
    let doc = json!({
        "config": config.echo(),
        "config_sha256": hash,
        "summary": out.summary,
        "artifacts": names,
    });
    let path = config.output_dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    artifacts.push(path);

    Ok(RunResult {
        config_echo: config.clone(),
        summary: out.summary,
        artifacts,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn histogram_table(name: &str, values: &[f64], spec: HistogramSpec) -> Result<(Table, Value)> {
    let h = histogram(values, spec)?;
    let mut t = Table::new(name, &["bin_left", "bin_right", "count"]);
    for b in &h.bins {
        t.push(vec![num(b.bin_left), num(b.bin_right), b.count.to_string()]);
    }
    Ok((t, json!({"underflow": h.underflow, "overflow": h.overflow, "total": h.total()})))
}

fn describe(xs: &[f64]) -> Value {
    let (mean, var) = mean_var(xs);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    json!({"mean": mean, "variance": var, "sd": var.sqrt(), "min": min, "max": max})
}

fn fraction_in(xs: &[f64], lo: f64, hi: f64) -> f64 {
    xs.iter().filter(|&&x| x >= lo && x <= hi).count() as f64 / xs.len() as f64
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeParams {
    #[serde(default = "default_intervals")]
    intervals: Vec<[f64; 2]>,
    #[serde(default = "default_edge_bins")]
    histogram: HistogramSpec,
}

fn default_intervals() -> Vec<[f64; 2]> {
    vec![[1.968, 2.032]]
}

fn default_edge_bins() -> HistogramSpec {
    HistogramSpec {
        bins: 60,
        lo: 1.7,
        hi: 2.3,
    }
}

/// Top-eigenvalue samples, their histogram, and interval fractions.
pub struct EdgeHistogram;

impl Experiment for EdgeHistogram {
    fn name(&self) -> &'static str {
        "edge_histogram"
    }

    fn summary(&self) -> &'static str {
        "distribution of the top eigenvalue of n^{-1/2} X"
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let p: EdgeParams = ctx.params()?;
        let l1 = ctx.top_eigenvalues(self.name())?;
        let mut samples = Table::new("samples", &["rep", "lambda1"]);
        for (r, x) in l1.iter().enumerate() {
            samples.push(vec![(r + 1).to_string(), num(*x)]);
        }
        let (hist, overflow) = histogram_table("histogram", &l1, p.histogram)?;
        let mut summary = json!({"n": ctx.n(), "reps": l1.len(), "lambda1": describe(&l1), "histogram": overflow});
        let mut fractions = Vec::new();
        for [lo, hi] in p.intervals {
            let f = fraction_in(&l1, lo, hi);
            summary[format!("fraction_in_[{lo},{hi}]")] = json!(f);
            fractions.push(json!({"lo": lo, "hi": hi, "fraction": f}));
        }
        summary["fractions"] = Value::Array(fractions);
        Ok(ExperimentOutput {
            summary,
            tables: vec![samples, hist],
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EsdParams {
    #[serde(default)]
    histogram: HistogramSpec,
}

/// Spectra against the semicircle law: KS distance per draw and a pooled histogram.
pub struct Esd;

impl Experiment for Esd {
    fn name(&self) -> &'static str {
        "esd"
    }

    fn summary(&self) -> &'static str {
        "empirical spectral distribution against the semicircle law"
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let p: EsdParams = ctx.params()?;
        let spectra = ctx.replicates(self.name(), |_, rng| eigen_sym(&ctx.model.sample(rng), true))?;
        let mut ks = Table::new("ks", &["rep", "ks_distance", "lambda1"]);
        let mut pooled = Vec::new();
        let mut dists = Vec::new();
        for (r, s) in spectra.iter().enumerate() {
            let rep = esd_compare(s, p.histogram)?;
            ks.push(vec![(r + 1).to_string(), num(rep.ks_distance), num(s.largest())]);
            dists.push(rep.ks_distance);
            pooled.extend_from_slice(&s.eigenvalues);
        }
        let (hist, overflow) = histogram_table("histogram", &pooled, p.histogram)?;
        let max_ks = dists.iter().copied().fold(0.0, f64::max);
        Ok(ExperimentOutput {
            summary: json!({"n": ctx.n(), "reps": spectra.len(), "ks_distance": describe(&dists), "max_ks_distance": max_ks, "histogram": overflow}),
            tables: vec![ks, hist],
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

/// `n^{2/3}(λ₁ - 2)` samples; no distributional claim is attached.
pub struct TwScaling;

impl Experiment for TwScaling {
    fn name(&self) -> &'static str {
        "tw_scaling"
    }

    fn summary(&self) -> &'static str {
        "edge-scaled samples n^{2/3}(lambda1 - 2)"
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let _: NoParams = ctx.params()?;
        let l1 = ctx.top_eigenvalues(self.name())?;
        let scale = (ctx.n() as f64).powf(2.0 / 3.0);
        let scaled: Vec<f64> = l1.iter().map(|x| scale * (x - 2.0)).collect();
        let mut t = Table::new("samples", &["rep", "lambda1", "scaled"]);
        for (r, (a, b)) in l1.iter().zip(&scaled).enumerate() {
            t.push(vec![(r + 1).to_string(), num(*a), num(*b)]);
        }
        Ok(ExperimentOutput {
            summary: json!({"n": ctx.n(), "reps": l1.len(), "scaled": describe(&scaled)}),
            tables: vec![t],
        })
    }
}

/// Spiked-model fluctuations of the top eigenvalue.
pub struct Fluct;

impl Experiment for Fluct {
    fn name(&self) -> &'static str {
        "fluct"
    }

    fn summary(&self) -> &'static str {
        "scaled top-eigenvalue fluctuations of X + (lambda/sqrt n) 11^T"
    }

    fn needs_spike(&self) -> bool {
        true
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let _: NoParams = ctx.params()?;
        let cfg = ctx.config;
        let spec = cfg.spike.as_ref().expect("validated").spiked(&cfg.model)?;
        let res = fluctuation_experiment(&spec, cfg.reps, cfg.master_seed, cfg.workers, ctx.budget)?;
        let mut t = Table::new("scaled_samples", &["rep", "lambda1", "scaled_stat", "sum_xij_term", "remainder"]);
        for s in &res.samples {
            t.push(vec![
                s.rep.to_string(),
                num(s.lambda1),
                num(s.scaled_stat),
                num(s.sum_xij_term),
                num(s.remainder),
            ]);
        }
        let remainders: Vec<f64> = res.samples.iter().map(|s| s.remainder).collect();
        let summary = json!({
            "n": res.n,
            "lambda": res.lambda,
            "regime": res.regime,
            "exponent": res.exponent,
            "growth_ratio": res.growth_ratio,
            "growth_warning": res.growth_warning,
            "sigma2_target": res.sigma2_target,
            "exact_term_variance": res.exact_term_variance,
            "mean": res.mean,
            "variance": res.variance,
            "ks_statistic": res.ks.statistic,
            "ks_p_value": res.ks.p_value,
            "rejections": res.rejections,
            "rejection_rate": res.rejection_rate,
            "remainder": describe(&remainders),
        });
        Ok(ExperimentOutput {
            summary,
            tables: vec![t],
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentParams {
    #[serde(default = "default_two_k")]
    two_k: Vec<usize>,
    #[serde(default)]
    method: MomentMethod,
}

fn default_two_k() -> Vec<usize> {
    vec![2, 4]
}

/// Exact trace moments next to Monte Carlo estimates over `reps` draws.
pub struct MomentsCheck;

impl Experiment for MomentsCheck {
    fn name(&self) -> &'static str {
        "moments_check"
    }

    fn summary(&self) -> &'static str {
        "exact E Tr[(n^{-1/2} X)^{2k}] against Monte Carlo"
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let p: MomentParams = ctx.params()?;
        let mut exact = Vec::new();
        for &tk in &p.two_k {
            exact.push(exact_trace_moment(ctx.model, tk, p.method, ctx.budget)?);
        }
        let draws = ctx.replicates(self.name(), |_, rng| {
            let x = ctx.model.sample(rng);
            Ok(p.two_k.iter().map(|&tk| normalized_trace_power(&x, tk)).collect::<Vec<f64>>())
        })?;
        let mut t = Table::new("moments", &["two_k", "exact", "mc_mean", "mc_stderr", "z", "term_count"]);
        let mut rows = Vec::new();
        for (c, e) in exact.iter().enumerate() {
            let xs: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            let (mean, var) = mean_var(&xs);
            let se = (var / xs.len() as f64).sqrt();
            let z = if se > 0.0 { (mean - e.value) / se } else { 0.0 };
            t.push(vec![e.two_k.to_string(), num(e.value), num(mean), num(se), num(z), num(e.term_count)]);
            rows.push(json!({"two_k": e.two_k, "exact": e.value, "mc_mean": mean, "mc_stderr": se, "z": z, "method": e.method}));
        }
        Ok(ExperimentOutput {
            summary: json!({"n": ctx.n(), "reps": draws.len(), "moments": rows}),
            tables: vec![t],
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FkParams {
    #[serde(default = "default_word")]
    word: Word,
    /// Also tabulate FK class counts for sentence length `l`.
    #[serde(default)]
    class_table_l: Option<usize>,
}

fn default_word() -> Word {
    "12134321451".parse().expect("valid word")
}

/// Syllabification, edge classes, and the matching-case audit of one word.
pub struct FkAudit;

impl Experiment for FkAudit {
    fn name(&self) -> &'static str {
        "fk_audit"
    }

    fn summary(&self) -> &'static str {
        "FK syllabification and Wick matching-case audit of a word"
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let p: FkParams = ctx.params()?;
        let max_letter = *p.word.letters().iter().max().expect("nonempty") as usize;
        if max_letter > ctx.n() {
            return Err(Error::invalid("model.n", format!("word uses letter {max_letter} but n = {}", ctx.n())));
        }
        if !ctx.model.is_gaussian() {
            return Err(Error::invalid("model", "the Wick audit requires a Gaussian model"));
        }
        let sentence = fk_syllabify(&p.word);
        let cov = |a, b| ctx.model.entry_cov(a, b);
        let audit = matching_case_audit(&p.word, cov)?;
        let wick = wick_expectation(&word_factors(&p.word), cov);

        let mut buckets = Table::new("audit", &["cases", "pairings", "total"]);
        for b in &audit.buckets {
            let cases: Vec<&str> = b.cases.iter().map(|c| c.label()).collect();
            buckets.push(vec![cases.join(" "), b.pairings.to_string(), num(b.total)]);
        }
        let mut tables = vec![buckets];
        let mut summary = json!({
            "word": p.word,
            "sentence": sentence,
            "fk_valid": sentence.validate().map_err(|v| v.to_string()).err(),
            "m": sentence.m(),
            "identity_rhs": sentence.identity_rhs(),
            "audit_total": audit.total,
            "wick_value": wick,
            "per_case": audit.per_case,
        });
        if let Some(l) = p.class_table_l {
            let cells = fk_class_table(l, ctx.budget)?;
            let mut t = Table::new("fk_classes", &["k", "l", "m", "count", "bound"]);
            let mut within = true;
            for c in &cells {
                within &= (c.count as f64) <= c.bound;
                t.push(vec![c.k.to_string(), c.l.to_string(), c.m.to_string(), c.count.to_string(), num(c.bound)]);
            }
            summary["class_counts_within_bound"] = json!(within);
            tables.push(t);
        }
        Ok(ExperimentOutput { summary, tables })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadParams {
    #[serde(default = "default_norm_dev_max")]
    norm_dev_max: f64,
    #[serde(default = "default_inner_prod_const")]
    inner_prod_const: f64,
}

fn default_norm_dev_max() -> f64 {
    0.1
}

fn default_inner_prod_const() -> f64 {
    10.0
}

/// Condition reports for independently seeded sparse Rademacher families.
///
/// Replicate `r` uses the family seed given by the first `u64` of its stream.
pub struct RadCheck;

impl Experiment for RadCheck {
    fn name(&self) -> &'static str {
        "rad_check"
    }

    fn summary(&self) -> &'static str {
        "norm and inner-product conditions of sparse Rademacher families over many seeds"
    }

    fn run(&self, ctx: &RunContext<'_>) -> Result<ExperimentOutput> {
        let p: RadParams = ctx.params()?;
        let EnsembleSpec::LinearEnsemble(spec) = &ctx.config.model else {
            return Err(Error::invalid("model", "rad_check needs a LinearEnsemble model"));
        };
        let epsilon = spec
            .epsilon
            .ok_or_else(|| Error::invalid("model.epsilon", "rad_check compares against n^{-(1+epsilon)}"))?;
        let n = spec.n;
        let ln_n = (n as f64).ln();
        let thresholds = QThresholds {
            epsilon,
            norm_dev_const: p.norm_dev_max * ln_n * ln_n,
            inner_prod_const: p.inner_prod_const,
        };
        let reports = ctx.replicates(self.name(), |_, rng| {
            let q_seed = rng.next_u64();
            let fam = QFamily::new(n, spec.big_n, spec.p, q_seed)?;
            Ok((q_seed, check_q_conditions(&fam, thresholds, ctx.budget)?))
        })?;
        let mut t = Table::new(
            "conditions",
            &["rep", "q_seed", "max_norm_dev", "max_inner_prod", "max_op_norm", "norm_ok", "inner_ok"],
        );
        let mut both = 0;
        for (r, (seed, rep)) in reports.iter().enumerate() {
            both += (rep.norm_ok && rep.inner_ok) as usize;
            t.push(vec![
                (r + 1).to_string(),
                seed.to_string(),
                num(rep.max_norm_dev),
                num(rep.max_inner_prod),
                num(rep.max_op_norm),
                rep.norm_ok.to_string(),
                rep.inner_ok.to_string(),
            ]);
        }
        let first = &reports[0].1;
        Ok(ExperimentOutput {
            summary: json!({
                "n": n,
                "N": spec.big_n,
                "p": spec.p,
                "reps": reports.len(),
                "norm_dev_threshold": first.norm_dev_threshold,
                "inner_prod_threshold": first.inner_prod_threshold,
                "norm_ok": reports.iter().filter(|x| x.1.norm_ok).count(),
                "inner_ok": reports.iter().filter(|x| x.1.inner_ok).count(),
                "both_ok": both,
            }),
            tables: vec![t],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::VDist;

    fn config(experiment: &str, dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment: experiment.into(),
            model: EnsembleSpec::TestModel {
                n: 12,
                epsilon: 0.5,
                v_dist: VDist::Gaussian,
            },
            spike: None,
            reps: 3,
            master_seed: 9,
            workers: Workers::Fixed(1),
            output_dir: dir.to_path_buf(),
            params: Map::new(),
        }
    }

    #[test]
    fn config_round_trip_and_hash_ignores_workers() {
        let dir = tempfile::tempdir().unwrap();
        let c = config("esd", dir.path());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let mut d = c.clone();
        d.workers = Workers::Auto;
        d.output_dir = PathBuf::from("elsewhere");
        assert_eq!(c.config_hash(), d.config_hash());
        d.master_seed = 10;
        assert_ne!(c.config_hash(), d.config_hash());
    }

    #[test]
    fn validation_names_fields() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ExperimentRegistry::with_defaults();
        let mut c = config("nope", dir.path());
        let e = c.validate(&reg).unwrap_err();
        assert!(e.to_string().contains("experiment"), "{e}");
        c.experiment = "fluct".into();
        assert!(c.validate(&reg).unwrap_err().to_string().contains("spike"));
        c.experiment = "esd".into();
        c.reps = 0;
        assert!(c.validate(&reg).unwrap_err().to_string().contains("reps"));
        assert!(ExperimentConfig::from_json(r#"{"experiment":"esd"}"#).is_err());
        c.reps = 1;
        c.params.insert("bogus".into(), json!(1));
        let e = run(&c, &reg, &Budget::new(1e9)).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn csv_format() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec!["1".into(), "p,q".into()]);
        assert_eq!(t.to_csv("abc").unwrap(), "# config_sha256=abc\na,b\n1,\"p,q\"\n");
    }

    #[test]
    fn spike_config() {
        let s = SpikeConfig {
            lambda: None,
            coef: Some(2.0),
            exponent: Some(0.5),
            d_const: None,
        };
        assert_eq!(s.lambda_for(16).unwrap(), 8.0);
        let bad = SpikeConfig {
            lambda: Some(1.0),
            ..s
        };
        assert!(bad.lambda_for(16).is_err());
    }

    #[test]
    fn runs_are_worker_independent() {
        let reg = ExperimentRegistry::with_defaults();
        for name in ["edge_histogram", "esd", "tw_scaling", "moments_check"] {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let ca = config(name, a.path());
            let mut cb = config(name, b.path());
            cb.workers = Workers::Fixed(3);
            let ra = run(&ca, &reg, &Budget::new(1e9)).unwrap();
            run(&cb, &reg, &Budget::new(1e9)).unwrap();
            for p in &ra.artifacts {
                let f = p.file_name().unwrap();
                assert_eq!(fs::read(p).unwrap(), fs::read(b.path().join(f)).unwrap(), "{name}/{f:?}");
            }
        }
    }
}
