//! Command-line front end for the `bernpoisson` experiments.
//!
//! Exit codes: 0 success, 1 invalid input, 2 guard trip (a partial report is
//! still written), 3 internal invariant violation.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bernpoisson::analytic::{
    binary_entropy, gaussian_cdf, gaussian_cdf_scaled, limit_atom, match_prob, resolve_log2,
    resolve_regime, weight_floor,
};
use bernpoisson::experiments::{self, fmt17, ExperimentReport};
use bernpoisson::{Error, ExperimentKind, ExperimentSpec, ModelParams, RegimeRule};

use config::{read_config, ConfigError, Settings};

#[derive(Parser, Debug)]
#[command(
    name = "bernpoisson",
    version,
    about = "Occurrence counts of random k-bit words in Bernoulli(p) sequences",
    after_help = "Exit codes: 0 ok, 1 invalid input, 2 guard trip (partial report written), 3 internal error."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exact annealed law of the non-intersecting count M̃_k for each k.
    AnnealedExact {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        rule: EntropyRule,
    },
    /// Simulated non-intersecting model against the exact annealed law.
    AnnealedMc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        #[command(flatten)]
        rule: EntropyRule,
        #[command(flatten)]
        explicit: ExplicitN,
        #[command(flatten)]
        sim: Simulation,
    },
    /// Quenched law of M_k^x(ω), ω ~ Ber(p)^k, for sampled sequences x.
    Quenched {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        #[command(flatten)]
        rule: EntropyRule,
        #[command(flatten)]
        explicit: ExplicitN,
        #[command(flatten)]
        budget: Budget,
    },
    /// Exact law of the count over the fixed-weight class F_k, against Po(λ_k) and Po(λ).
    ConditionalPoisson {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        #[command(flatten)]
        rule: ConditionalRule,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        verdict: VerdictArgs,
    },
    /// Compare (pmf0, pmf1) with the only Poisson law matching pmf0.
    NonPoissonWitness {
        #[command(flatten)]
        common: Common,
        /// Seeds for quenched rows; without seeds the exact annealed law is used.
        #[arg(long, value_name = "N|LIST")]
        seeds: Option<String>,
        #[command(flatten)]
        rule: EntropyRule,
        #[command(flatten)]
        budget: Budget,
    },
    /// Stein–Chen bound on d_TV(M̈_k, Po(λ_k)), with an optional Monte Carlo check.
    TvBound {
        #[command(flatten)]
        common: Common,
        /// Seed for the Monte Carlo estimate (first seed is used); omit to skip it.
        #[arg(long, value_name = "N|LIST")]
        seeds: Option<String>,
        #[command(flatten)]
        rule: ConditionalRule,
        #[command(flatten)]
        bound: BoundArgs,
        #[command(flatten)]
        budget: Budget,
    },
    /// Cross-seed dispersion of the quenched pipeline.
    Concentration {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        #[command(flatten)]
        rule: EntropyRule,
        #[command(flatten)]
        explicit: ExplicitN,
        #[command(flatten)]
        cp: ConditionalRule,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        verdict: VerdictArgs,
    },
    /// Evaluate one scalar function and print it.
    Analytic(AnalyticArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// p: probability of a 1 bit, in (0, 1).
    #[arg(long)]
    p: Option<String>,
    /// k: word length; a comma-separated list runs several lengths.
    #[arg(long, value_name = "K[,K...]")]
    k: Option<String>,
    /// Largest count n tabulated as pmf[n]; the rest is reported as tail.
    #[arg(long, value_name = "N")]
    n_max: Option<String>,
    /// Worker threads (0 = all cores). Output does not depend on it.
    #[arg(long)]
    threads: Option<String>,
    /// Output file, CSV unless it ends in .json; repeatable. Default: CSV on stdout.
    #[arg(long, value_name = "PATH")]
    out: Vec<String>,
}

#[derive(Args, Debug)]
struct Seeds {
    /// Sequence seeds: N means 1..=N, "a..b" a range, "s1,s2,..." a list.
    #[arg(long, value_name = "N|LIST")]
    seeds: Option<String>,
}

#[derive(Args, Debug)]
struct EntropyRule {
    /// a: N_k = 2^{k H(p)} a^{sqrt k} (critical regime; limit atom Φ_p(-log_{p/(1-p)} a)).
    #[arg(long)]
    a: Option<String>,
    /// δ: N_k = 2^{k (H(p) + δ)} (δ < 0 sub-critical, δ > 0 super-critical).
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
}

#[derive(Args, Debug)]
struct ExplicitN {
    /// N_k: use this fixed number of windows for every k.
    #[arg(long = "n", value_name = "N_k")]
    n: Option<String>,
}

#[derive(Args, Debug)]
struct ConditionalRule {
    /// c: fixed weight n_k = floor(p k - c sqrt k).
    #[arg(long, allow_hyphen_values = true)]
    c: Option<String>,
    /// λ: target mean; N_k = floor(λ / (p^{n_k} (1-p)^{k-n_k})).
    #[arg(long)]
    lambda: Option<String>,
}

#[derive(Args, Debug)]
struct Budget {
    /// Memory guard: largest N_k counted per sequence.
    #[arg(long, value_name = "N")]
    max_windows: Option<String>,
}

#[derive(Args, Debug)]
struct VerdictArgs {
    /// Per-seed TV threshold (conditional-poisson) or dispersion threshold (concentration).
    #[arg(long)]
    threshold: Option<String>,
    /// Fraction of seeds that must meet the threshold.
    #[arg(long)]
    majority: Option<String>,
}

#[derive(Args, Debug)]
struct Simulation {
    /// Simulated trials of (W, Z^(1..N_k)).
    #[arg(long)]
    trials: Option<String>,
    /// fast: binomial shortcut; honest: materialize every block.
    #[arg(long, value_name = "fast|honest")]
    sim_mode: Option<String>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    /// brute-force: exact E[I_i I_j] by enumeration (k <= 28); analytic-bound: upper bounds (p > 1/2).
    #[arg(long, value_name = "brute-force|analytic-bound")]
    mode: Option<String>,
    /// Independent sequences averaged by the Monte Carlo TV estimate.
    #[arg(long)]
    mc_sequences: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Function {
    /// H(p) in bits.
    Entropy,
    /// Φ(s), standard Gaussian CDF.
    Phi,
    /// Φ_p(s), CDF of N(0, p(1-p)).
    PhiP,
    /// Φ_p(-c), c = log_{p/(1-p)} a.
    LimitAtom,
    /// (p^2 + (1-p)^2)^k.
    MatchProb,
    /// n_k = floor(p k - c sqrt k).
    #[value(name = "n-k")]
    NK,
    /// N_k from the rule given by --a, --delta, --c/--lambda or --n.
    #[value(name = "N-k")]
    BigNK,
}

#[derive(Args, Debug)]
struct AnalyticArgs {
    /// Function to evaluate.
    #[arg(long = "fn", value_enum)]
    function: Function,
    /// p: probability of a 1 bit.
    #[arg(long)]
    p: Option<f64>,
    /// k: word length.
    #[arg(long)]
    k: Option<u32>,
    /// s: argument of Φ and Φ_p.
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
    /// a: critical-regime scale.
    #[arg(long)]
    a: Option<f64>,
    /// δ: entropy exponent shift.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// c: weight offset in n_k = floor(p k - c sqrt k).
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    /// λ: conditional-Poisson target mean.
    #[arg(long)]
    lambda: Option<f64>,
    /// N_k: explicit window count.
    #[arg(long = "n")]
    n: Option<u64>,
}

/// Failure classes, mapped one to one onto exit codes.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Guard(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Guard(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.0)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Invariant(_) | Error::Normalization(_) => Failure::Internal(e.to_string()),
        Error::Guard(_) | Error::Overflow(_) | Error::InsufficientLength { .. } => {
            Failure::Guard(e.to_string())
        }
        _ => Failure::Invalid(e.to_string()),
    }
}

fn put(s: &mut Settings, key: &str, v: &Option<String>) -> Result<(), Failure> {
    if let Some(v) = v {
        s.set(key, v, &format!("--{}", key.replace('_', "-")))?;
    }
    Ok(())
}

fn flags_common(c: &Common) -> Result<(Settings, Settings), Failure> {
    let file = match &c.config {
        Some(path) => read_config(path)?,
        None => Settings::default(),
    };
    let mut s = Settings::default();
    put(&mut s, "p", &c.p)?;
    put(&mut s, "k", &c.k)?;
    put(&mut s, "n_max", &c.n_max)?;
    put(&mut s, "threads", &c.threads)?;
    if !c.out.is_empty() {
        put(&mut s, "out", &Some(c.out.join(",")))?;
    }
    Ok((file, s))
}

fn collect(cmd: &Cmd) -> Result<(ExperimentKind, Settings), Failure> {
    use ExperimentKind as K;
    let (kind, common) = match cmd {
        Cmd::AnnealedExact { common, .. } => (K::AnnealedExact, common),
        Cmd::AnnealedMc { common, .. } => (K::AnnealedMc, common),
        Cmd::Quenched { common, .. } => (K::QuenchedRegime, common),
        Cmd::ConditionalPoisson { common, .. } => (K::ConditionalPoisson, common),
        Cmd::NonPoissonWitness { common, .. } => (K::NonPoissonWitness, common),
        Cmd::TvBound { common, .. } => (K::TvBound, common),
        Cmd::Concentration { common, .. } => (K::ConcentrationSweep, common),
        Cmd::Analytic(_) => unreachable!("handled separately"),
    };
    let (file, mut s) = flags_common(common)?;
    let entropy = |s: &mut Settings, r: &EntropyRule| -> Result<(), Failure> {
        put(s, "a", &r.a)?;
        put(s, "delta", &r.delta)
    };
    let cp = |s: &mut Settings, r: &ConditionalRule| -> Result<(), Failure> {
        put(s, "c", &r.c)?;
        put(s, "lambda", &r.lambda)
    };
    match cmd {
        Cmd::AnnealedExact { rule, .. } => entropy(&mut s, rule)?,
        Cmd::AnnealedMc { seeds, rule, explicit, sim, .. } => {
            put(&mut s, "seeds", &seeds.seeds)?;
            entropy(&mut s, rule)?;
            put(&mut s, "n", &explicit.n)?;
            put(&mut s, "trials", &sim.trials)?;
            put(&mut s, "sim_mode", &sim.sim_mode)?;
        }
        Cmd::Quenched { seeds, rule, explicit, budget, .. } => {
            put(&mut s, "seeds", &seeds.seeds)?;
            entropy(&mut s, rule)?;
            put(&mut s, "n", &explicit.n)?;
            put(&mut s, "max_windows", &budget.max_windows)?;
        }
        Cmd::ConditionalPoisson { seeds, rule, budget, verdict, .. } => {
            put(&mut s, "seeds", &seeds.seeds)?;
            cp(&mut s, rule)?;
            put(&mut s, "max_windows", &budget.max_windows)?;
            put(&mut s, "threshold", &verdict.threshold)?;
            put(&mut s, "majority", &verdict.majority)?;
        }
        Cmd::NonPoissonWitness { seeds, rule, budget, .. } => {
            put(&mut s, "seeds", seeds)?;
            entropy(&mut s, rule)?;
            put(&mut s, "max_windows", &budget.max_windows)?;
        }
        Cmd::TvBound { seeds, rule, bound, budget, .. } => {
            put(&mut s, "seeds", seeds)?;
            cp(&mut s, rule)?;
            put(&mut s, "mode", &bound.mode)?;
            put(&mut s, "mc_sequences", &bound.mc_sequences)?;
            put(&mut s, "max_windows", &budget.max_windows)?;
        }
        Cmd::Concentration { seeds, rule, explicit, cp: c, budget, verdict, .. } => {
            put(&mut s, "seeds", &seeds.seeds)?;
            entropy(&mut s, rule)?;
            put(&mut s, "n", &explicit.n)?;
            cp(&mut s, c)?;
            put(&mut s, "max_windows", &budget.max_windows)?;
            put(&mut s, "threshold", &verdict.threshold)?;
            put(&mut s, "majority", &verdict.majority)?;
        }
        Cmd::Analytic(_) => unreachable!(),
    }
    Ok((kind, file.overlay(s)))
}

/// The one rule named by the settings.
fn rule_of(s: &Settings) -> Result<RegimeRule, Failure> {
    let mut found = Vec::new();
    if let Some(a) = s.a {
        found.push(RegimeRule::EntropyScaled { a });
    }
    if let Some(delta) = s.delta {
        found.push(RegimeRule::EntropyExponentShifted { delta });
    }
    if let Some(n) = s.n {
        found.push(RegimeRule::Explicit { n });
    }
    match (s.c, s.lambda) {
        (Some(c), Some(lambda)) => found.push(RegimeRule::ConditionalPoisson { c, lambda }),
        (None, None) => {}
        (None, Some(_)) => return Err(Failure::Invalid("missing c (--c) for the conditional rule".into())),
        (Some(_), None) => {
            return Err(Failure::Invalid("missing lambda (--lambda) for the conditional rule".into()))
        }
    }
    match found.len() {
        1 => Ok(found[0]),
        0 => Err(Failure::Invalid("no window-count rule given (a, delta, n or c + lambda)".into())),
        _ => Err(Failure::Invalid("conflicting window-count rules: give exactly one of a, delta, n, c + lambda".into())),
    }
}

fn build_spec(kind: ExperimentKind, s: &Settings) -> Result<ExperimentSpec, Failure> {
    if let Some(e) = &s.experiment {
        let wanted = e.replace('-', "_");
        let alias = match wanted.as_str() {
            "quenched" => "quenched_regime",
            "concentration" => "concentration_sweep",
            w => w,
        };
        if alias != kind.name() {
            return Err(Failure::Invalid(format!(
                "config names experiment `{e}` but the subcommand runs {}",
                kind.name()
            )));
        }
    }
    let p = s.p.ok_or_else(|| Failure::Invalid("missing p (--p)".into()))?;
    let k = s.k.clone().ok_or_else(|| Failure::Invalid("missing k (--k)".into()))?;
    let mut spec = ExperimentSpec::new(kind, p, rule_of(s)?, k);
    if let Some(v) = &s.seeds {
        spec.seeds = v.clone();
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = s.$f { spec.$f = v; } )* };
    }
    set!(trials, n_max, threads, max_windows, threshold, majority, mc_sequences);
    if let Some(m) = s.mode {
        spec.bound_mode = m;
    }
    if let Some(m) = s.sim_mode {
        spec.sim_mode = m;
    }
    spec.validate().map_err(|e| Failure::Invalid(e.to_string()))?;
    Ok(spec)
}

/// Six significant digits for human-readable lines.
fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let e = v.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        format!("{v:.*}", (5 - e) as usize)
    } else {
        format!("{v:.5e}")
    }
}

fn write_outputs(report: &ExperimentReport, outs: &[PathBuf]) -> Result<(), Failure> {
    let io_err = |e: Error| Failure::Invalid(e.to_string());
    if outs.is_empty() {
        let stdout = io::stdout();
        report.write_csv(stdout.lock()).map_err(io_err)?;
        return Ok(());
    }
    for path in outs {
        let file = File::create(path)
            .map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        if path.extension().is_some_and(|x| x == "json") {
            w.write_all(report.to_json().map_err(io_err)?.as_bytes())?;
            w.write_all(b"\n")?;
        } else {
            report.write_csv(&mut w).map_err(io_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn summarize(report: &ExperimentReport) {
    let mut err = io::stderr().lock();
    for r in &report.rows {
        if let Some(g) = &r.guard {
            let seed = r.seed.map(|s| format!(" seed={s}")).unwrap_or_default();
            let _ = writeln!(err, "guard: k={}{seed}: {g}", r.k);
        }
    }
    for v in &report.verdicts {
        let k = v.k.map(|k| format!(" k={k}")).unwrap_or_default();
        let th = v.threshold.map(|t| format!(" threshold={}", sig6(t))).unwrap_or_default();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(err, "{tag} {}{k} value={}{th}", v.name, sig6(v.value));
    }
}

fn run_experiment(cmd: &Cmd) -> Result<(), Failure> {
    let (kind, settings) = collect(cmd)?;
    let spec = build_spec(kind, &settings)?;
    let echo = serde_json::to_string(&spec).map_err(|e| Failure::Internal(e.to_string()))?;
    eprintln!("effective spec: {echo}");
    let report = experiments::run(&spec).map_err(|e| match classify(e) {
        Failure::Guard(m) => Failure::Invalid(m),
        f => f,
    })?;
    write_outputs(&report, settings.out.as_deref().unwrap_or(&[]))?;
    summarize(&report);
    if report.guard_tripped() {
        return Err(Failure::Guard("guard tripped; partial report written".into()));
    }
    Ok(())
}

fn analytic(a: &AnalyticArgs) -> Result<String, Failure> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Failure::Invalid(format!("--fn needs --{name}")))
    };
    let need_k = || a.k.ok_or_else(|| Failure::Invalid("--fn needs --k".into()));
    let p = || need(a.p, "p");
    let value = match a.function {
        Function::Entropy => binary_entropy(p()?).map_err(classify)?,
        Function::Phi => gaussian_cdf(need(a.s, "s")?),
        Function::PhiP => gaussian_cdf_scaled(need(a.s, "s")?, p()?).map_err(classify)?,
        Function::LimitAtom => limit_atom(need(a.a, "a")?, p()?).map_err(classify)?,
        Function::MatchProb => match_prob(need_k()?, p()?).map_err(classify)?,
        Function::NK => {
            let n = weight_floor(need_k()?, p()?, need(a.c, "c")?).map_err(classify)?;
            return Ok(n.to_string());
        }
        Function::BigNK => {
            let s = Settings {
                a: a.a,
                delta: a.delta,
                c: a.c,
                lambda: a.lambda,
                n: a.n,
                ..Settings::default()
            };
            let rule = rule_of(&s)?;
            let (k, p) = (need_k()?, p()?);
            let n = ModelParams::new(p, k).and_then(|mp| resolve_regime(&rule, &mp));
            return match n {
                Ok(n) => Ok(n.to_string()),
                Err(Error::Overflow(_) | Error::Range(_)) if resolve_log2(&rule, k, p).is_ok() => {
                    let l = resolve_log2(&rule, k, p).map_err(classify)?;
                    Ok(format!("2^{}", fmt17(l)))
                }
                Err(e) => Err(classify(e)),
            };
        }
    };
    Ok(format!("{value}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.cmd {
        Cmd::Analytic(a) => analytic(a).map(|v| println!("{v}")),
        cmd => run_experiment(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(m) | Failure::Guard(m) | Failure::Internal(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
