//! Closed-form scalar functions: entropy, Gaussian CDFs, word probabilities,
//! limit atoms, fixed-weight combinatorics and the sequence-length rules.
//!
//! Small probabilities are carried as base-2 logarithms and only
//! exponentiated at the edges; at `k = 64` a single word probability can be
//! below `1e-18`.

use std::f64::consts::{LN_2, PI, SQRT_2};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Word;
use crate::numeric::{ln_binomial, log2_complement};

/// Largest supported word length. One word fits in a `u64`.
pub const MAX_K: u32 = 64;

/// Largest `log2 N_k` that [`resolve_regime`] will turn into an integer.
pub const MAX_LOG2_N: f64 = 62.0;

/// Success probability and word length of a Bernoulli word model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    p: f64,
    k: u32,
}

impl ModelParams {
    pub fn new(p: f64, k: u32) -> Result<Self> {
        check_probability(p)?;
        if k == 0 || k > MAX_K {
            return Err(Error::Range(format!("k must lie in [1, {MAX_K}], got {k}")));
        }
        Ok(Self { p, k })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn k(&self) -> u32 {
        self.k
    }
}

/// Target weight class `F_k` and Poisson mean of a conditional experiment.
///
/// `n_k` is normally `floor(p k - c sqrt(k))`; [`FixedWeightSpec::with_weight`]
/// sets it directly for arbitrary weight sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedWeightSpec {
    pub c: f64,
    pub n_k: u32,
    pub lambda: f64,
}

impl FixedWeightSpec {
    pub fn from_params(params: &ModelParams, c: f64, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let n_k = weight_floor(params.k, params.p, c)?;
        Ok(Self { c, n_k, lambda })
    }

    pub fn with_weight(k: u32, n_k: u32, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if n_k > k {
            return Err(Error::Range(format!("weight {n_k} exceeds word length {k}")));
        }
        Ok(Self { c: f64::NAN, n_k, lambda })
    }

    /// `log2 q` with `q = p^{n_k} (1-p)^{k-n_k}`.
    pub fn log2_q(&self, params: &ModelParams) -> f64 {
        weight_log2_prob(params.k, self.n_k, params.p)
    }
}

/// How the number of windows `N_k` is chosen for a given `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimeRule {
    /// `N_k = round(2^{k H(p)} a^{sqrt k})`.
    EntropyScaled { a: f64 },
    /// `N_k = round(2^{k (H(p) + delta)})`, `delta > -H(p)`. Positive
    /// `delta` may exceed `1 - H(p)`: the windows then outnumber the words.
    EntropyExponentShifted { delta: f64 },
    /// `N_k = floor(lambda / q)` with `q = p^{n_k} (1-p)^{k-n_k}`.
    ConditionalPoisson { c: f64, lambda: f64 },
    /// A fixed `N_k`.
    Explicit { n: u64 },
}

impl RegimeRule {
    pub fn validate(&self, p: f64) -> Result<()> {
        match *self {
            RegimeRule::EntropyScaled { a } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::Domain(format!("a must be positive, got {a}")));
                }
            }
            RegimeRule::EntropyExponentShifted { delta } => {
                let h = binary_entropy(p)?;
                if !(delta > -h && delta.is_finite()) {
                    return Err(Error::Domain(format!("delta must exceed {}, got {delta}", -h)));
                }
            }
            RegimeRule::ConditionalPoisson { c, lambda } => {
                check_lambda(lambda)?;
                if !c.is_finite() {
                    return Err(Error::Domain(format!("c must be finite, got {c}")));
                }
            }
            RegimeRule::Explicit { n } => {
                if n == 0 {
                    return Err(Error::Range("explicit N must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("p must lie strictly inside (0,1), got {p}")))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda must be positive, got {lambda}")))
    }
}

/// Binary entropy `H(p) = -p log2 p - (1-p) log2 (1-p)` in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(-p * p.log2() - (1.0 - p) * log2_complement(p))
}

/// Standard Gaussian CDF, evaluated as `erfc(-s / sqrt 2) / 2`.
///
/// Going through `erfc` keeps full relative accuracy in the lower tail,
/// where `1 + erf` would cancel.
pub fn gaussian_cdf(s: f64) -> f64 {
    0.5 * libm::erfc(-s / SQRT_2)
}

/// CDF of `N(0, p(1-p))`.
pub fn gaussian_cdf_scaled(s: f64, p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(gaussian_cdf(s / (p * (1.0 - p)).sqrt()))
}

/// `log2 Ber^k(ω) = |ω| log2 p + (k - |ω|) log2 (1-p)`.
pub fn word_log_prob(omega: &Word, p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(weight_log2_prob(omega.width(), omega.weight(), p))
}

/// `log2 (p^w (1-p)^{k-w})` without validation.
pub(crate) fn weight_log2_prob(k: u32, w: u32, p: f64) -> f64 {
    let ones = if w == 0 { 0.0 } else { w as f64 * p.log2() };
    let zeros = if w == k { 0.0 } else { (k - w) as f64 * log2_complement(p) };
    ones + zeros
}

/// `ln a / ln(p / (1-p))`, the exponent `c` with `(p/(1-p))^c = a`.
pub fn log_odds_exponent(a: f64, p: f64) -> Result<f64> {
    check_probability(p)?;
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("a must be positive, got {a}")));
    }
    if p == 0.5 {
        return Err(Error::Domain("log-odds exponent undefined at p = 1/2".into()));
    }
    Ok(a.ln() / (p.ln() - (-p).ln_1p()))
}

/// Limiting mass at zero in the critical regime: `Φ_p(-c)` with
/// `c = log_{p/(1-p)} a`.
pub fn limit_atom(a: f64, p: f64) -> Result<f64> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::Domain(format!("limit atom requires p in (1/2, 1), got {p}")));
    }
    let c = log_odds_exponent(a, p)?;
    gaussian_cdf_scaled(-c, p)
}

/// Probability that two independent `Ber^k` words coincide,
/// `(p^2 + (1-p)^2)^k`.
pub fn match_prob(k: u32, p: f64) -> Result<f64> {
    check_probability(p)?;
    if k == 0 {
        return Err(Error::Range("k must be positive".into()));
    }
    let base = p * p + (1.0 - p) * (1.0 - p);
    Ok((k as f64 * base.log2()).exp2())
}

/// `|F| = C(k, n)`, exact.
pub fn fixed_weight_count(k: u32, n: u32) -> Result<u128> {
    if k > MAX_K || n > k {
        return Err(Error::Range(format!("need 0 <= n <= k <= {MAX_K}, got k={k}, n={n}")));
    }
    let n = n.min(k - n) as u128;
    let k = k as u128;
    let mut c: u128 = 1;
    for i in 0..n {
        // c * (k - i) is divisible by (i + 1) at every step.
        c = c * (k - i) / (i + 1);
    }
    Ok(c)
}

/// Exact binomial weight of one class next to its local Gaussian
/// approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedWeightMass {
    pub exact: f64,
    pub approx: f64,
}

impl FixedWeightMass {
    pub fn ratio(&self) -> f64 {
        self.exact / self.approx
    }
}

/// `Ber^k(|ω| = n)` together with `(2π k p(1-p))^{-1/2} exp(-(n-pk)^2 / (2 k p(1-p)))`.
pub fn fixed_weight_mass(k: u32, n: u32, p: f64) -> Result<FixedWeightMass> {
    check_probability(p)?;
    if n > k {
        return Err(Error::Range(format!("weight {n} exceeds word length {k}")));
    }
    let ln_exact = ln_binomial(k as u64, n as u64) + weight_log2_prob(k, n, p) * LN_2;
    let var = k as f64 * p * (1.0 - p);
    let dev = n as f64 - p * k as f64;
    let approx = (2.0 * PI * var).sqrt().recip() * (-dev * dev / (2.0 * var)).exp();
    Ok(FixedWeightMass { exact: ln_exact.exp(), approx })
}

/// `n_k = floor(p k - c sqrt k)`, required to land in `[0, k]`.
pub fn weight_floor(k: u32, p: f64, c: f64) -> Result<u32> {
    check_probability(p)?;
    let v = (p * k as f64 - c * (k as f64).sqrt()).floor();
    if !(v >= 0.0 && v <= k as f64) {
        return Err(Error::Range(format!(
            "floor(pk - c sqrt k) = {v} falls outside [0, {k}]"
        )));
    }
    Ok(v as u32)
}

/// `log2 N_k` before rounding. Used directly by the annealed evaluator,
/// which works with window counts far beyond `u64`.
pub fn resolve_log2(rule: &RegimeRule, k: u32, p: f64) -> Result<f64> {
    rule.validate(p)?;
    let kf = k as f64;
    Ok(match *rule {
        RegimeRule::EntropyScaled { a } => kf * binary_entropy(p)? + kf.sqrt() * a.log2(),
        RegimeRule::EntropyExponentShifted { delta } => kf * (binary_entropy(p)? + delta),
        RegimeRule::ConditionalPoisson { c, lambda } => {
            let n_k = weight_floor(k, p, c)?;
            lambda.log2() - weight_log2_prob(k, n_k, p)
        }
        RegimeRule::Explicit { n } => (n as f64).log2(),
    })
}

/// Resolve a rule to an integer `N_k` for word length `params.k()`.
///
/// For the conditional-Poisson rule the result is corrected until
/// `N q <= lambda < (N+1) q` holds in exact dyadic arithmetic.
pub fn resolve_regime(rule: &RegimeRule, params: &ModelParams) -> Result<u64> {
    let (k, p) = (params.k(), params.p());
    if let RegimeRule::Explicit { n } = *rule {
        rule.validate(p)?;
        return Ok(n);
    }
    let log2_n = resolve_log2(rule, k, p)?;
    if log2_n > MAX_LOG2_N {
        return Err(Error::Overflow(format!(
            "log2 N_k = {log2_n:.3} exceeds {MAX_LOG2_N} at k = {k}"
        )));
    }
    let n = match *rule {
        RegimeRule::ConditionalPoisson { c, lambda } => {
            let n_k = weight_floor(k, p, c)?;
            exact_floor_ratio(lambda, k, n_k, p, log2_n.exp2().floor() as u64)
        }
        _ => log2_n.exp2().round() as u64,
    };
    if n == 0 {
        return Err(Error::Range(format!("resolved N_k is zero at k = {k}")));
    }
    Ok(n)
}

/// A positive dyadic rational `mant * 2^exp`.
#[derive(Debug, Clone)]
struct Dyadic {
    mant: BigUint,
    exp: i64,
}

impl Dyadic {
    fn from_f64(x: f64) -> Self {
        debug_assert!(x > 0.0 && x.is_finite());
        let bits = x.to_bits();
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        Self { mant: BigUint::from(m), exp: e }
    }

    fn from_u64(n: u64) -> Self {
        Self { mant: BigUint::from(n), exp: 0 }
    }

    /// `1 - x` for `0 < x < 1`, exactly.
    fn one_minus(x: &Dyadic) -> Self {
        debug_assert!(x.exp < 0);
        let one = BigUint::one() << (-x.exp) as usize;
        Self { mant: one - &x.mant, exp: x.exp }
    }

    fn mul(&self, other: &Dyadic) -> Self {
        Self { mant: &self.mant * &other.mant, exp: self.exp + other.exp }
    }

    fn pow(&self, n: u32) -> Self {
        let mut acc = Dyadic { mant: BigUint::one(), exp: 0 };
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    fn to_f64(&self) -> f64 {
        use num_traits::ToPrimitive;
        let bits = self.mant.bits() as i64;
        let shift = (bits - 64).max(0);
        let top = (&self.mant >> shift as usize).to_f64().unwrap_or(f64::INFINITY);
        let mut e = self.exp + shift;
        let mut v = top;
        while e > 0 {
            let s = e.min(1000);
            v *= (s as f64).exp2();
            e -= s;
        }
        while e < 0 {
            let s = (-e).min(1000);
            v *= (-(s as f64)).exp2();
            e += s;
        }
        v
    }

    fn le(&self, other: &Dyadic) -> bool {
        if self.mant.is_zero() {
            return true;
        }
        let e = self.exp.min(other.exp);
        let a = &self.mant << (self.exp - e) as usize;
        let b = &other.mant << (other.exp - e) as usize;
        a <= b
    }
}

/// `floor(lambda / q)` with `q = p^w (1-p)^{k-w}`, starting from an estimate
/// and stepping until `N q <= lambda < (N+1) q` holds exactly.
fn exact_floor_ratio(lambda: f64, k: u32, w: u32, p: f64, estimate: u64) -> u64 {
    let q = weight_prob_dyadic(k, w, p);
    let lam = Dyadic::from_f64(lambda);
    let fits = |n: u64| Dyadic::from_u64(n).mul(&q).le(&lam);
    let mut n = estimate;
    while n > 0 && !fits(n) {
        n -= 1;
    }
    while fits(n + 1) {
        n += 1;
    }
    n
}

fn weight_prob_dyadic(k: u32, w: u32, p: f64) -> Dyadic {
    let pd = Dyadic::from_f64(p);
    pd.pow(w).mul(&Dyadic::one_minus(&pd).pow(k - w))
}

/// `N p^w (1-p)^{k-w}` from the exact product, for the conditional-Poisson
/// mean `λ_k`. Capped at `cap`, which the exact product never exceeds when
/// `N` came from [`resolve_regime`] with `lambda = cap`.
pub fn realized_mean(n: u64, k: u32, w: u32, p: f64, cap: f64) -> f64 {
    let v = Dyadic::from_u64(n).mul(&weight_prob_dyadic(k, w, p)).to_f64();
    v.min(cap)
}

/// Whether `N q <= lambda < (N+1) q` holds exactly; exposed for tests.
pub fn conditional_guard_holds(n: u64, lambda: f64, k: u32, w: u32, p: f64) -> bool {
    let q = weight_prob_dyadic(k, w, p);
    let lam = Dyadic::from_f64(lambda);
    Dyadic::from_u64(n).mul(&q).le(&lam) && !Dyadic::from_u64(n + 1).mul(&q).le(&lam)
}
