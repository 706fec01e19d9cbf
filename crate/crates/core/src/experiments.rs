//! Experiment drivers. A report's rows, summaries and verdicts are a pure
//! function of its [`ExperimentSpec`]; only the telemetry block varies
//! between runs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    limit_atom, realized_mean, resolve_log2, resolve_regime, FixedWeightSpec, ModelParams,
    RegimeRule, MAX_K,
};
use crate::counting::{
    build_count_table_with, indicator_product_mean_all_words, quenched_distribution_all_words,
    quenched_distribution_fixed_weight, simulate_nonintersecting, CountDistribution, CountOptions,
    CountTable, SimMode, SupportKind, ALL_WORDS_MAX_K,
};
use crate::error::{Error, Result};
use crate::exact::{
    annealed_distribution, annealed_mean, poisson_distribution, stein_chen_bound, tv_distance,
    AnnealedSpec, BoundMode,
};
use crate::model::{sample_sequence, BitSequence, RngStream};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest `k` accepted by the pure-formula kinds.
pub const MAX_ANNEALED_K: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    AnnealedExact,
    AnnealedMc,
    QuenchedRegime,
    ConditionalPoisson,
    NonPoissonWitness,
    TvBound,
    ConcentrationSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::AnnealedExact => "annealed_exact",
            Self::AnnealedMc => "annealed_mc",
            Self::QuenchedRegime => "quenched_regime",
            Self::ConditionalPoisson => "conditional_poisson",
            Self::NonPoissonWitness => "non_poisson_witness",
            Self::TvBound => "tv_bound",
            Self::ConcentrationSweep => "concentration_sweep",
        }
    }
}

/// Everything that determines a report. There are no hidden defaults:
/// [`ExperimentSpec::new`] fills every field and the whole struct is echoed
/// into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub p: f64,
    pub rule: RegimeRule,
    pub k_list: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Simulated trials (annealed Monte Carlo).
    pub trials: u64,
    /// Counts `0..=n_max` are tabulated; the rest is reported as tail.
    pub n_max: usize,
    /// Worker threads; 0 means the rayon default. Does not affect output.
    pub threads: usize,
    /// Memory guard on the number of windows counted per sequence.
    pub max_windows: u64,
    pub bound_mode: BoundMode,
    pub sim_mode: SimMode,
    /// Independent sequences averaged by the TV Monte Carlo estimate.
    pub mc_sequences: u32,
    /// Per-seed TV threshold (conditional Poisson) or dispersion threshold
    /// (concentration). Chosen from pilot runs, not a theoretical constant.
    pub threshold: f64,
    /// Fraction of seeds that must meet `threshold`.
    pub majority: f64,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, p: f64, rule: RegimeRule, k_list: Vec<u32>) -> Self {
        let (max_windows, threshold) = match kind {
            ExperimentKind::ConditionalPoisson => (20_000_000, 0.05),
            ExperimentKind::ConcentrationSweep => (1 << 26, 0.02),
            _ => (1 << 26, 0.05),
        };
        Self {
            kind,
            p,
            rule,
            k_list,
            seeds: Vec::new(),
            trials: 100_000,
            n_max: 10,
            threads: 0,
            max_windows,
            bound_mode: BoundMode::BruteForce,
            sim_mode: SimMode::Fast,
            mc_sequences: 200,
            threshold,
            majority: 0.8,
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {}", self.p)));
        }
        self.rule.validate(self.p)?;
        if self.k_list.is_empty() {
            return Err(Error::Range("k_list must not be empty".into()));
        }
        let k_cap = match self.kind {
            AnnealedExact => MAX_ANNEALED_K,
            NonPoissonWitness if self.seeds.is_empty() => MAX_ANNEALED_K,
            _ => MAX_K,
        };
        if let Some(&k) = self.k_list.iter().find(|&&k| k == 0 || k > k_cap) {
            return Err(Error::Range(format!("k must lie in [1, {k_cap}], got {k}")));
        }
        let cp = matches!(self.rule, RegimeRule::ConditionalPoisson { .. });
        let rule_ok = match self.kind {
            AnnealedExact | NonPoissonWitness => matches!(
                self.rule,
                RegimeRule::EntropyScaled { .. } | RegimeRule::EntropyExponentShifted { .. }
            ),
            AnnealedMc | QuenchedRegime => !cp,
            ConditionalPoisson | TvBound => cp,
            ConcentrationSweep => true,
        };
        if !rule_ok {
            return Err(Error::Domain(format!(
                "rule {:?} is not valid for {}",
                self.rule,
                self.kind.name()
            )));
        }
        let min_seeds = match self.kind {
            AnnealedMc | QuenchedRegime | ConditionalPoisson => 1,
            ConcentrationSweep => 10,
            _ => 0,
        };
        if self.seeds.len() < min_seeds {
            return Err(Error::Range(format!(
                "{} needs at least {min_seeds} seed(s), got {}",
                self.kind.name(),
                self.seeds.len()
            )));
        }
        if self.n_max == 0 {
            return Err(Error::Range("n_max must be at least 1".into()));
        }
        if self.kind == AnnealedMc && self.trials == 0 {
            return Err(Error::Range("trials must be positive".into()));
        }
        if self.kind == TvBound && !self.seeds.is_empty() && self.mc_sequences < 2 {
            return Err(Error::Range("mc_sequences must be at least 2".into()));
        }
        if self.kind == TvBound && self.bound_mode == BoundMode::AnalyticBound && self.p <= 0.5 {
            return Err(Error::Domain("analytic bound requires p > 1/2".into()));
        }
        if self.max_windows == 0 {
            return Err(Error::Range("max_windows must be positive".into()));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::Range("threshold must be positive".into()));
        }
        if !(self.majority > 0.0 && self.majority <= 1.0) {
            return Err(Error::Range("majority must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One `(k, seed)` result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub k: u32,
    pub seed: Option<u64>,
    /// Realized `N_k` when it fits in 64 bits.
    pub n_windows: Option<u64>,
    pub log2_n_windows: Option<f64>,
    /// Fixed weight `n_k` for the conditional kinds.
    pub n_k: Option<u32>,
    pub lambda_k: Option<f64>,
    pub pmf: Vec<f64>,
    pub tail: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Set when a guard stopped this row; the run continues.
    pub guard: Option<String>,
}

impl ReportRow {
    fn new(k: u32, seed: Option<u64>) -> Self {
        Self {
            k,
            seed,
            n_windows: None,
            log2_n_windows: None,
            n_k: None,
            lambda_k: None,
            pmf: Vec::new(),
            tail: None,
            metrics: BTreeMap::new(),
            guard: None,
        }
    }

    fn set_law(&mut self, d: &CountDistribution) {
        self.pmf = d.pmf.clone();
        self.tail = Some(d.tail);
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Cross-seed mean and sample standard deviation of one metric at one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub k: u32,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub k: Option<u32>,
    pub value: f64,
    pub threshold: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub elapsed_ms: u64,
    pub peak_table_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub spec: ExperimentSpec,
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<Summary>,
    pub verdicts: Vec<Verdict>,
    pub telemetry: Telemetry,
}

impl ExperimentReport {
    pub fn guard_tripped(&self) -> bool {
        self.rows.iter().any(|r| r.guard.is_some())
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn rows_for(&self, k: u32) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.k == k)
    }

    pub fn summary(&self, k: u32, metric: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.k == k && s.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per `(k, seed)`. Floats carry 17 significant digits.
    ///
    /// Conditional-Poisson reports use the fixed header
    /// `k,seed,n_k,N_k,lambda_k,tv_to_lambda_k,tv_to_lambda,pmf0,pmf1,pmf2,pmf3,tail`
    /// where `tail` is the mass above 3. Other kinds list `pmf0..pmf{n_max}`
    /// followed by their metrics in name order and a `guard` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.spec.kind == ExperimentKind::ConditionalPoisson {
            w.write_record([
                "k", "seed", "n_k", "N_k", "lambda_k", "tv_to_lambda_k", "tv_to_lambda", "pmf0",
                "pmf1", "pmf2", "pmf3", "tail",
            ])?;
            for r in &self.rows {
                let mut rec = vec![
                    r.k.to_string(),
                    opt(r.seed, |s| s.to_string()),
                    opt(r.n_k, |v| v.to_string()),
                    opt(r.n_windows, |v| v.to_string()),
                    opt(r.lambda_k, fmt17),
                    opt(r.metric("tv_to_lambda_k"), fmt17),
                    opt(r.metric("tv_to_lambda"), fmt17),
                ];
                if r.guard.is_some() {
                    rec.extend(std::iter::repeat_n(String::new(), 5));
                } else {
                    let head: f64 = r.pmf.iter().take(4).sum();
                    for n in 0..4 {
                        rec.push(fmt17(r.pmf.get(n).copied().unwrap_or(0.0)));
                    }
                    let rest: f64 = r.pmf.iter().skip(4).sum::<f64>() + r.tail.unwrap_or(0.0);
                    debug_assert!((head + rest - 1.0).abs() < 1e-6);
                    rec.push(fmt17(rest));
                }
                w.write_record(&rec)?;
            }
        } else {
            let metric_names: BTreeSet<&str> =
                self.rows.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
            let mut header: Vec<String> =
                ["k", "seed", "N_k", "log2_N_k", "n_k", "lambda_k"].map(String::from).to_vec();
            header.extend((0..=self.spec.n_max).map(|n| format!("pmf{n}")));
            header.push("tail".into());
            header.extend(metric_names.iter().map(|s| s.to_string()));
            header.push("guard".into());
            w.write_record(&header)?;
            for r in &self.rows {
                let mut rec = vec![
                    r.k.to_string(),
                    opt(r.seed, |s| s.to_string()),
                    opt(r.n_windows, |v| v.to_string()),
                    opt(r.log2_n_windows, fmt17),
                    opt(r.n_k, |v| v.to_string()),
                    opt(r.lambda_k, fmt17),
                ];
                for n in 0..=self.spec.n_max {
                    rec.push(opt(r.pmf.get(n).copied(), fmt17));
                }
                rec.push(opt(r.tail, fmt17));
                for m in &metric_names {
                    rec.push(opt(r.metric(m), fmt17));
                }
                rec.push(r.guard.clone().unwrap_or_default());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// 17 significant digits, scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run the experiment named by `spec.kind`.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    match spec.kind {
        ExperimentKind::AnnealedExact => run_annealed_exact(spec),
        ExperimentKind::AnnealedMc => run_annealed_mc(spec),
        ExperimentKind::QuenchedRegime => run_quenched_regime(spec),
        ExperimentKind::ConditionalPoisson => run_conditional_poisson(spec),
        ExperimentKind::NonPoissonWitness => run_non_poisson_witness(spec),
        ExperimentKind::TvBound => run_tv_bound(spec),
        ExperimentKind::ConcentrationSweep => run_concentration_sweep(spec),
    }
}

/// Per-row work output: the row plus the bytes of any count table built.
type Task = (ReportRow, usize);

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    start: Instant,
}

impl<'a> Ctx<'a> {
    fn begin(spec: &'a ExperimentSpec, kind: ExperimentKind) -> Result<Self> {
        if spec.kind != kind {
            return Err(Error::Domain(format!(
                "spec is for {}, not {}",
                spec.kind.name(),
                kind.name()
            )));
        }
        spec.validate()?;
        Ok(Self { spec, start: Instant::now() })
    }

    /// Run `f` over `(k, seed)` pairs in parallel, preserving input order.
    fn map<I, F>(&self, items: Vec<I>, f: F) -> Result<(Vec<ReportRow>, usize)>
    where
        I: Send + Sync,
        F: Fn(&I) -> Result<Task> + Send + Sync,
    {
        let work = || items.par_iter().map(&f).collect::<Result<Vec<Task>>>();
        let done = if self.spec.threads == 0 {
            work()?
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.spec.threads)
                .build()
                .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?
                .install(work)?
        };
        let peak = done.iter().map(|t| t.1).max().unwrap_or(0);
        Ok((done.into_iter().map(|t| t.0).collect(), peak))
    }

    fn finish(
        self,
        rows: Vec<ReportRow>,
        summaries: Vec<Summary>,
        verdicts: Vec<Verdict>,
        peak_table_bytes: usize,
    ) -> ExperimentReport {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            spec: self.spec.clone(),
            rows,
            summaries,
            verdicts,
            telemetry: Telemetry {
                elapsed_ms: self.start.elapsed().as_millis() as u64,
                peak_table_bytes,
            },
        }
    }
}

/// Turn recoverable failures into a guard row; invariant violations abort.
fn guarded(mut row: ReportRow, r: Result<Task>) -> Result<Task> {
    match r {
        Ok(t) => Ok(t),
        Err(e @ (Error::Invariant(_) | Error::Normalization(_))) => Err(e),
        Err(e) => {
            row.guard = Some(e.to_string());
            Ok((row, 0))
        }
    }
}

fn pairs(spec: &ExperimentSpec) -> Vec<(u32, u64)> {
    spec.k_list.iter().flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s))).collect()
}

fn sample_mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summaries of `metrics` (plus `pmf{n}` names) over the non-guard rows of
/// each `k`.
fn summarize(spec: &ExperimentSpec, rows: &[ReportRow], metrics: &[&str]) -> Vec<Summary> {
    let mut out = Vec::new();
    for &k in &spec.k_list {
        let ok: Vec<&ReportRow> = rows.iter().filter(|r| r.k == k && r.guard.is_none()).collect();
        if ok.is_empty() {
            continue;
        }
        let mut names: Vec<String> = (0..=spec.n_max).map(|n| format!("pmf{n}")).collect();
        names.extend(metrics.iter().map(|m| m.to_string()));
        for name in names {
            let vals: Vec<f64> = ok
                .iter()
                .filter_map(|r| match name.strip_prefix("pmf") {
                    Some(n) => r.pmf.get(n.parse::<usize>().ok()?).copied(),
                    None => r.metric(&name),
                })
                .collect();
            if vals.is_empty() {
                continue;
            }
            let (mean, sd) = sample_mean_sd(&vals);
            out.push(Summary { k, metric: name, count: vals.len(), mean, sd });
        }
    }
    out
}

fn params(p: f64, k: u32) -> Result<ModelParams> {
    ModelParams::new(p, k)
}

fn critical_atom(rule: &RegimeRule, p: f64) -> Option<f64> {
    match *rule {
        RegimeRule::EntropyScaled { a } if p > 0.5 => limit_atom(a, p).ok(),
        _ => None,
    }
}

/// Annealed spec for `k`: integer `Ñ` when it is representable, otherwise
/// `2^log2`.
fn annealed_spec(spec: &ExperimentSpec, k: u32) -> Result<AnnealedSpec> {
    let log2_n = resolve_log2(&spec.rule, k, spec.p)?;
    if k <= MAX_K && log2_n <= 52.0 {
        let n = resolve_regime(&spec.rule, &params(spec.p, k)?)?;
        AnnealedSpec::new(k, spec.p, n, spec.n_max)
    } else {
        AnnealedSpec::from_log2(k, spec.p, log2_n, spec.n_max)
    }
}

fn annealed_row(spec: &ExperimentSpec, k: u32) -> Result<Task> {
    let a = annealed_spec(spec, k)?;
    let mut row = ReportRow::new(k, None);
    row.n_windows = a.n_tilde;
    row.log2_n_windows = Some(a.log2_n_tilde);
    let d = annealed_distribution(&a)?;
    row.set_law(&d);
    row.metrics.insert("mean".into(), annealed_mean(&a)?);
    if let Some(atom) = critical_atom(&spec.rule, spec.p) {
        row.metrics.insert("limit_atom".into(), atom);
        row.metrics.insert("atom_error".into(), (d.pmf[0] - atom).abs());
    }
    row.metrics.insert("head_mass".into(), d.pmf.iter().take(4).sum());
    Ok((row, 0))
}

/// `true` when `xs` is strictly decreasing.
fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn trend_verdict(name: &str, xs: &[f64], decreasing: bool) -> Option<Verdict> {
    if xs.len() < 2 {
        return None;
    }
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    let pass = if decreasing { strictly_decreasing(xs) } else { strictly_decreasing(&neg) };
    Some(Verdict { name: name.into(), k: None, value: xs[xs.len() - 1], threshold: None, pass })
}

fn metric_series(rows: &[ReportRow], name: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.guard.is_none()).filter_map(|r| r.metric(name)).collect()
}

/// Exact annealed law for each `k`, compared with the regime prediction.
pub fn run_annealed_exact(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::AnnealedExact)?;
    let (rows, _) =
        ctx.map(spec.k_list.clone(), |&k| guarded(ReportRow::new(k, None), annealed_row(spec, k)))?;
    let mut verdicts = Vec::new();
    match spec.rule {
        RegimeRule::EntropyScaled { .. } => {
            verdicts.extend(trend_verdict("atom_error_decreasing", &metric_series(&rows, "atom_error"), true));
        }
        RegimeRule::EntropyExponentShifted { delta } => {
            let pmf0: Vec<f64> =
                rows.iter().filter(|r| r.guard.is_none()).map(|r| r.pmf[0]).collect();
            if delta < 0.0 {
                verdicts.extend(trend_verdict("pmf0_increasing", &pmf0, false));
            } else {
                verdicts.extend(trend_verdict("head_mass_decreasing", &metric_series(&rows, "head_mass"), true));
            }
        }
        _ => {}
    }
    Ok(ctx.finish(rows, Vec::new(), verdicts, 0))
}

/// Simulated non-intersecting model against the exact annealed law.
pub fn run_annealed_mc(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::AnnealedMc)?;
    let (rows, _) = ctx.map(pairs(spec), |&(k, seed)| {
        guarded(
            ReportRow::new(k, Some(seed)),
            (|| {
                let n = resolve_regime(&spec.rule, &params(spec.p, k)?)?;
                let samples = simulate_nonintersecting(
                    &RngStream::new(seed, 0),
                    k,
                    n,
                    spec.p,
                    spec.trials,
                    spec.sim_mode,
                )?;
                let emp = CountDistribution::from_samples(&samples, spec.n_max)?;
                let exact = annealed_distribution(&AnnealedSpec::new(k, spec.p, n, spec.n_max)?)?;
                let mut row = ReportRow::new(k, Some(seed));
                row.n_windows = Some(n);
                row.log2_n_windows = Some((n as f64).log2());
                row.set_law(&emp);
                row.metrics.insert("tv_to_exact".into(), tv_distance(&emp, &exact)?);
                row.metrics.insert("exact_pmf0".into(), exact.pmf[0]);
                Ok((row, 0))
            })(),
        )
    })?;
    let summaries = summarize(spec, &rows, &["tv_to_exact"]);
    Ok(ctx.finish(rows, summaries, Vec::new(), 0))
}

fn check_windows(spec: &ExperimentSpec, n: u64) -> Result<()> {
    if n > spec.max_windows {
        return Err(Error::Guard(format!(
            "N_k = {n} exceeds the window budget {}",
            spec.max_windows
        )));
    }
    Ok(())
}

fn count_sequence(seed: u64, stream: u64, k: u32, n: u64, p: f64, filter: Option<u32>) -> Result<CountTable> {
    let x: BitSequence = sample_sequence(&RngStream::new(seed, stream), n + k as u64 - 1, p);
    build_count_table_with(&x, k, n, &CountOptions { threads: 1, weight_filter: filter })
}

fn quenched_row(spec: &ExperimentSpec, k: u32, seed: u64) -> Result<Task> {
    if k > ALL_WORDS_MAX_K {
        return Err(Error::Guard(format!(
            "all-words quenched law needs k <= {ALL_WORDS_MAX_K}, got {k}"
        )));
    }
    let n = resolve_regime(&spec.rule, &params(spec.p, k)?)?;
    check_windows(spec, n)?;
    let table = count_sequence(seed, 0, k, n, spec.p, None)?;
    let d = quenched_distribution_all_words(&table, spec.p, spec.n_max)?;
    let mut row = ReportRow::new(k, Some(seed));
    row.n_windows = Some(n);
    row.log2_n_windows = Some((n as f64).log2());
    row.set_law(&d);
    if let Some(atom) = critical_atom(&spec.rule, spec.p) {
        row.metrics.insert("limit_atom".into(), atom);
    }
    row.metrics.insert("distinct".into(), table.distinct() as f64);
    if table.saturated() {
        return Err(Error::Guard("a window counter saturated".into()));
    }
    Ok((row, table.heap_bytes()))
}

/// Quenched law of `M_k^x(ω)`, `ω ~ Ber^k`, for each `(k, seed)`.
pub fn run_quenched_regime(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::QuenchedRegime)?;
    let (rows, peak) = ctx.map(pairs(spec), |&(k, seed)| {
        guarded(ReportRow::new(k, Some(seed)), quenched_row(spec, k, seed))
    })?;
    let summaries = summarize(spec, &rows, &[]);
    Ok(ctx.finish(rows, summaries, Vec::new(), peak))
}

fn rule_cp(rule: &RegimeRule) -> (f64, f64) {
    match *rule {
        RegimeRule::ConditionalPoisson { c, lambda } => (c, lambda),
        _ => unreachable!("validated"),
    }
}

fn conditional_row(spec: &ExperimentSpec, k: u32, seed: u64) -> Result<Task> {
    let (c, lambda) = rule_cp(&spec.rule);
    let mp = params(spec.p, k)?;
    let fw = FixedWeightSpec::from_params(&mp, c, lambda)?;
    let n = resolve_regime(&spec.rule, &mp)?;
    check_windows(spec, n)?;
    let lambda_k = realized_mean(n, k, fw.n_k, spec.p, lambda);
    let table = count_sequence(seed, 0, k, n, spec.p, Some(fw.n_k))?;
    if table.saturated() {
        return Err(Error::Guard("a window counter saturated".into()));
    }
    let d = quenched_distribution_fixed_weight(&table, fw.n_k, spec.n_max)?;
    let mut row = ReportRow::new(k, Some(seed));
    row.n_windows = Some(n);
    row.log2_n_windows = Some((n as f64).log2());
    row.n_k = Some(fw.n_k);
    row.lambda_k = Some(lambda_k);
    row.metrics.insert("tv_to_lambda_k".into(), tv_distance(&d, &poisson_distribution(lambda_k, spec.n_max)?)?);
    row.metrics.insert("tv_to_lambda".into(), tv_distance(&d, &poisson_distribution(lambda, spec.n_max)?)?);
    row.set_law(&d);
    Ok((row, table.heap_bytes()))
}

fn majority_verdicts(spec: &ExperimentSpec, rows: &[ReportRow], metric: &str) -> Vec<Verdict> {
    spec.k_list
        .iter()
        .map(|&k| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.k == k)
                .map(|r| r.metric(metric).unwrap_or(f64::INFINITY))
                .collect();
            let good = vals.iter().filter(|&&v| v <= spec.threshold).count();
            let frac = good as f64 / vals.len() as f64;
            Verdict {
                name: format!("{metric}_majority_below_threshold"),
                k: Some(k),
                value: frac,
                threshold: Some(spec.majority),
                pass: frac >= spec.majority,
            }
        })
        .collect()
}

fn summary_trend(spec: &ExperimentSpec, summaries: &[Summary], metric: &str, sd: bool, name: &str) -> Option<Verdict> {
    let xs: Vec<f64> = spec
        .k_list
        .iter()
        .filter_map(|&k| summaries.iter().find(|s| s.k == k && s.metric == metric))
        .map(|s| if sd { s.sd } else { s.mean })
        .collect();
    trend_verdict(name, &xs, true)
}

/// Exact quenched law of the conditional count over all of `F_k`, with its
/// distance to `Po(λ_k)` and `Po(λ)`.
pub fn run_conditional_poisson(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::ConditionalPoisson)?;
    let (rows, peak) = ctx.map(pairs(spec), |&(k, seed)| {
        guarded(ReportRow::new(k, Some(seed)), conditional_row(spec, k, seed))
    })?;
    let summaries = summarize(spec, &rows, &["tv_to_lambda_k", "tv_to_lambda"]);
    let mut verdicts = majority_verdicts(spec, &rows, "tv_to_lambda_k");
    verdicts.extend(summary_trend(spec, &summaries, "tv_to_lambda_k", false, "mean_tv_decreasing"));
    Ok(ctx.finish(rows, summaries, verdicts, peak))
}

/// `λ̂ = -ln pmf0` and the gap `|pmf1 - λ̂ e^{-λ̂}|` between the observed
/// `pmf1` and the only Poisson law consistent with `pmf0`.
pub fn poisson_gap(pmf0: f64, pmf1: f64) -> (f64, f64) {
    let lambda_hat = -pmf0.ln();
    let implied = if lambda_hat.is_finite() { lambda_hat * (-lambda_hat).exp() } else { 0.0 };
    (lambda_hat, (pmf1 - implied).abs())
}

/// Exact annealed rows when `seeds` is empty, quenched rows otherwise.
pub fn run_non_poisson_witness(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::NonPoissonWitness)?;
    let with_gap = |r: Result<Task>| {
        r.map(|(mut row, b)| {
            let (lh, gap) = poisson_gap(row.pmf[0], row.pmf[1]);
            row.metrics.insert("lambda_hat".into(), lh);
            row.metrics.insert("poisson_gap".into(), gap);
            (row, b)
        })
    };
    let (rows, peak) = if spec.seeds.is_empty() {
        ctx.map(spec.k_list.clone(), |&k| {
            guarded(ReportRow::new(k, None), with_gap(annealed_row(spec, k)))
        })?
    } else {
        ctx.map(pairs(spec), |&(k, seed)| {
            guarded(ReportRow::new(k, Some(seed)), with_gap(quenched_row(spec, k, seed)))
        })?
    };
    let mut verdicts = Vec::new();
    let summaries = if spec.seeds.is_empty() {
        let gaps = metric_series(&rows, "poisson_gap");
        verdicts.extend(trend_verdict("poisson_gap_increasing", &gaps, false));
        Vec::new()
    } else {
        summarize(spec, &rows, &["lambda_hat", "poisson_gap"])
    };
    Ok(ctx.finish(rows, summaries, verdicts, peak))
}

/// Monte Carlo estimate of `d_TV(M̈_k, Po(λ_k))` for the annealed
/// conditional law: the exact quenched law over `F_k` is averaged over
/// `sequences` independent sequences. Returns the estimate and its standard
/// error `½ Σ_n sd_n / sqrt(S)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_conditional_tv(
    seed: u64,
    k: u32,
    p: f64,
    n_k: u32,
    n: u64,
    lambda_k: f64,
    sequences: u32,
    n_max: usize,
) -> Result<(f64, f64)> {
    let laws: Vec<Vec<f64>> = (0..sequences as u64)
        .into_par_iter()
        .map(|s| {
            let t = count_sequence(seed, s, k, n, p, Some(n_k))?;
            let d = quenched_distribution_fixed_weight(&t, n_k, n_max)?;
            let mut v = d.pmf;
            v.push(d.tail);
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let bins = n_max + 2;
    let mut mean = vec![0.0; bins];
    let mut se_sum = 0.0;
    for b in 0..bins {
        let col: Vec<f64> = laws.iter().map(|l| l[b]).collect();
        let (m, sd) = sample_mean_sd(&col);
        mean[b] = m;
        se_sum += sd;
    }
    let tail = mean.pop().unwrap_or(0.0);
    let est = CountDistribution::new(mean, tail, SupportKind::Empirical)?;
    let tv = tv_distance(&est, &poisson_distribution(lambda_k, n_max)?)?;
    Ok((tv, 0.5 * se_sum / (sequences as f64).sqrt()))
}

fn tv_bound_row(spec: &ExperimentSpec, k: u32) -> Result<Task> {
    let (c, lambda) = rule_cp(&spec.rule);
    let b = stein_chen_bound(k, spec.p, c, lambda, spec.bound_mode)?;
    let mut row = ReportRow::new(k, spec.seeds.first().copied());
    row.n_windows = Some(b.n_windows);
    row.log2_n_windows = Some((b.n_windows as f64).log2());
    row.n_k = Some(b.n_k);
    row.lambda_k = Some(b.lambda_k);
    row.metrics.insert("bound".into(), b.bound);
    row.metrics.insert("term_self".into(), b.term_self);
    row.metrics.insert("term_edges".into(), b.term_edges);
    row.metrics.insert("q".into(), b.q);
    if spec.p == 0.5 {
        // Under the uniform word law every offset gives E[I_i I_j] = 4^{-k}.
        let target = (-2.0 * k as f64).exp2();
        let dev = (1..k)
            .map(|ell| indicator_product_mean_all_words(k, ell, 0.5).map(|e| (e / target - 1.0).abs()))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        row.metrics.insert("uniform_pair_rel_dev".into(), dev);
    }
    if let Some(&seed) = spec.seeds.first() {
        check_windows(spec, b.n_windows)?;
        let (tv, se) =
            mc_conditional_tv(seed, k, spec.p, b.n_k, b.n_windows, b.lambda_k, spec.mc_sequences, spec.n_max)?;
        row.metrics.insert("mc_tv".into(), tv);
        row.metrics.insert("mc_se".into(), se);
    }
    Ok((row, 0))
}

/// Stein–Chen bound per `k`, optionally checked against a Monte Carlo
/// estimate of the true distance (seeded by `seeds[0]`).
pub fn run_tv_bound(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::TvBound)?;
    let (rows, _) =
        ctx.map(spec.k_list.clone(), |&k| guarded(ReportRow::new(k, None), tv_bound_row(spec, k)))?;
    let mut verdicts = Vec::new();
    for r in rows.iter().filter(|r| r.guard.is_none()) {
        if let (Some(b), Some(tv), Some(se)) = (r.metric("bound"), r.metric("mc_tv"), r.metric("mc_se")) {
            verdicts.push(Verdict {
                name: "bound_covers_mc".into(),
                k: Some(r.k),
                value: b - (tv - 3.0 * se),
                threshold: Some(0.0),
                pass: b >= tv - 3.0 * se,
            });
        }
        if let Some(dev) = r.metric("uniform_pair_rel_dev") {
            verdicts.push(Verdict {
                name: "uniform_pair_mean".into(),
                k: Some(r.k),
                value: dev,
                threshold: Some(1e-12),
                pass: dev <= 1e-12,
            });
        }
    }
    verdicts.extend(trend_verdict("bound_decreasing", &metric_series(&rows, "bound"), true));
    Ok(ctx.finish(rows, Vec::new(), verdicts, 0))
}

/// Cross-seed dispersion of the quenched pipeline: the conditional law when
/// the rule is conditional-Poisson, the all-words law otherwise.
pub fn run_concentration_sweep(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let ctx = Ctx::begin(spec, ExperimentKind::ConcentrationSweep)?;
    let cp = matches!(spec.rule, RegimeRule::ConditionalPoisson { .. });
    let (rows, peak) = ctx.map(pairs(spec), |&(k, seed)| {
        let r = if cp { conditional_row(spec, k, seed) } else { quenched_row(spec, k, seed) };
        guarded(ReportRow::new(k, Some(seed)), r)
    })?;
    let extra: &[&str] = if cp { &["tv_to_lambda_k"] } else { &[] };
    let summaries = summarize(spec, &rows, extra);
    let mut verdicts = Vec::new();
    for &k in &spec.k_list {
        let max_sd = summaries.iter().filter(|s| s.k == k).map(|s| s.sd).fold(f64::NAN, f64::max);
        if max_sd.is_nan() {
            continue;
        }
        verdicts.push(Verdict {
            name: "max_dispersion".into(),
            k: Some(k),
            value: max_sd,
            threshold: Some(spec.threshold),
            pass: max_sd <= spec.threshold,
        });
    }
    let key = if cp { "tv_to_lambda_k" } else { "pmf0" };
    verdicts.extend(summary_trend(spec, &summaries, key, true, "dispersion_decreasing"));
    Ok(ctx.finish(rows, summaries, verdicts, peak))
}
