//! Log-space evaluation of the annealed non-intersecting law, Poisson
//! reference laws, total variation, and Stein–Chen bounds for the
//! conditional intersecting model.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    fixed_weight_mass, match_prob, realized_mean, resolve_regime, weight_log2_prob, FixedWeightSpec,
    ModelParams, RegimeRule,
};
use crate::counting::{indicator_product_means, CountDistribution, SupportKind, ENUMERATION_MAX_K};
use crate::error::{Error, Result};
use crate::numeric::{ln_factorial, ln_pair, pairwise_sum, KahanSum};

/// Largest accepted `log2 Ñ`. Critical-regime runs at `k = 4096` need
/// about `4096 H(p)` bits.
pub const MAX_ANNEALED_LOG2_N: f64 = 65_536.0;

/// Terms further than this (in `ln`) below the largest term are dropped.
const DROP_LN: f64 = 1100.0 * LN_2;

/// `(1-q)^m` is flushed to zero once `m q` exceeds this.
const FLUSH_EXPONENT: f64 = 700.0;

/// Parameters of the annealed non-intersecting law of `M̃_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealedSpec {
    pub k: u32,
    pub p: f64,
    /// `log2 Ñ`.
    pub log2_n_tilde: f64,
    /// `Ñ` when it is a representable integer.
    pub n_tilde: Option<u64>,
    pub n_max: usize,
}

impl AnnealedSpec {
    pub fn new(k: u32, p: f64, n_tilde: u64, n_max: usize) -> Result<Self> {
        if n_tilde == 0 {
            return Err(Error::Range("Ñ must be at least 1".into()));
        }
        let spec = Self { k, p, log2_n_tilde: (n_tilde as f64).log2(), n_tilde: Some(n_tilde), n_max };
        spec.validate()?;
        Ok(spec)
    }

    /// `Ñ = 2^log2_n_tilde`, not necessarily an integer.
    pub fn from_log2(k: u32, p: f64, log2_n_tilde: f64, n_max: usize) -> Result<Self> {
        let spec = Self { k, p, log2_n_tilde, n_tilde: None, n_max };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {}", self.p)));
        }
        if self.k == 0 {
            return Err(Error::Range("k must be positive".into()));
        }
        if self.log2_n_tilde.is_nan() || self.log2_n_tilde < 0.0 {
            return Err(Error::Range("Ñ must be at least 1".into()));
        }
        if self.log2_n_tilde > MAX_ANNEALED_LOG2_N {
            return Err(Error::Overflow(format!(
                "log2 Ñ = {} exceeds {MAX_ANNEALED_LOG2_N}",
                self.log2_n_tilde
            )));
        }
        Ok(())
    }

    /// `Ñ` as a real number (`inf` beyond the `f64` range).
    pub fn n_tilde_f64(&self) -> f64 {
        match self.n_tilde {
            Some(n) => n as f64,
            None => self.log2_n_tilde.exp2(),
        }
    }

    fn ln_n(&self) -> f64 {
        match self.n_tilde {
            Some(n) => (n as f64).ln(),
            None => self.log2_n_tilde * LN_2,
        }
    }

    /// Largest `n` with `P(M̃ = n)` defined (`Ñ`, capped by `n_max`).
    pub fn max_count(&self) -> usize {
        let cap = if self.log2_n_tilde < 63.0 {
            self.n_tilde.unwrap_or_else(|| self.log2_n_tilde.exp2().floor() as u64)
        } else {
            u64::MAX
        };
        (self.n_max as u64).min(cap) as usize
    }

    /// `ln Ñ + ln(1 - n/Ñ)`, i.e. `ln(Ñ - n)`; `None` when `n = Ñ`.
    fn ln_n_minus(&self, n: u64) -> Option<f64> {
        match self.n_tilde {
            Some(t) if n >= t => None,
            Some(t) => Some(((t - n) as f64).ln()),
            None => Some(self.ln_n() + (-(n as f64) / self.n_tilde_f64()).ln_1p()),
        }
    }

    /// `ln C(Ñ, n) = n ln Ñ - ln n! + Σ_{j<n} ln(1 - j/Ñ)`.
    fn ln_choose(&self, n: u64) -> f64 {
        let big = self.n_tilde_f64();
        let mut acc = KahanSum::default();
        acc.add(n as f64 * self.ln_n());
        acc.add(-ln_factorial(n));
        for j in 1..n {
            acc.add((-(j as f64) / big).ln_1p());
        }
        acc.value()
    }
}

/// `P(M̃_k = n) = C(Ñ,n) Σ_i C(k,i) q_i^{n+1} (1 - q_i)^{Ñ-n}` with
/// `q_i = p^i (1-p)^{k-i}`.
///
/// All `k+1` weight-class terms are formed in natural-log space, sorted and
/// summed after a max shift, so swapping `p` and `1-p` reproduces the same
/// value bit for bit when `1-p` is exact.
pub fn annealed_pmf(spec: &AnnealedSpec, n: usize) -> Result<f64> {
    if n > spec.max_count() {
        return Err(Error::Range(format!(
            "count {n} outside [0, {}] for this spec",
            spec.max_count()
        )));
    }
    let n = n as u64;
    let k = spec.k as u64;
    let (ln_p, ln_c) = ln_pair(spec.p);
    let ln_choose_n = spec.ln_choose(n);
    let ln_m = spec.ln_n_minus(n);
    let ln_k_fact = ln_factorial(k);

    let mut terms: Vec<f64> = (0..=k)
        .into_par_iter()
        .filter_map(|i| {
            let ln_q = i as f64 * ln_p + (k - i) as f64 * ln_c;
            let ln_ck = ln_k_fact - (ln_factorial(i) + ln_factorial(k - i));
            let decay = match ln_m {
                None => 0.0,
                Some(ln_m) => {
                    // ln((Ñ-n) * -ln(1-q)); -ln(1-q) = q to double precision
                    // once q is tiny.
                    let ln_rate = if ln_q < -40.0 {
                        ln_q
                    } else {
                        (-(-ln_q.exp()).ln_1p()).ln()
                    };
                    let ln_t = ln_m + ln_rate;
                    if ln_t > FLUSH_EXPONENT.ln() {
                        return None;
                    }
                    ln_t.exp()
                }
            };
            Some(ln_choose_n + ln_ck + (n + 1) as f64 * ln_q - decay)
        })
        .collect();
    if terms.is_empty() {
        return Ok(0.0);
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    terms.retain(|&t| t >= top - DROP_LN);
    let mut scaled: Vec<f64> = terms.iter().map(|&t| (t - top).exp()).collect();
    scaled.sort_by(f64::total_cmp);
    let mut acc = KahanSum::default();
    for s in scaled {
        acc.add(s);
    }
    Ok((acc.value().ln() + top).exp())
}

/// `pmf[0..=max_count]` with the remaining mass as tail.
pub fn annealed_distribution(spec: &AnnealedSpec) -> Result<CountDistribution> {
    let pmf = (0..=spec.max_count())
        .map(|n| annealed_pmf(spec, n))
        .collect::<Result<Vec<_>>>()?;
    let total = pairwise_sum(&pmf);
    let tail = (1.0 - total).max(0.0);
    CountDistribution::new(pmf, tail, SupportKind::Annealed)
}

/// `E[M̃_k] = Ñ (p^2 + (1-p)^2)^k`.
pub fn annealed_mean(spec: &AnnealedSpec) -> Result<f64> {
    let m = match_prob(spec.k, spec.p)?;
    Ok(match spec.n_tilde {
        Some(n) => n as f64 * m,
        None => {
            let (p, q) = (spec.p, 1.0 - spec.p);
            (spec.log2_n_tilde + spec.k as f64 * (p * p + q * q).log2()).exp2()
        }
    })
}

/// `E[M̃_k | |W| = m] = Ñ p^m (1-p)^{k-m}`.
pub fn conditional_mean_fixed_weight(k: u32, m: u32, p: f64, n_tilde: u64) -> Result<f64> {
    if m > k {
        return Err(Error::Range(format!("weight {m} exceeds k = {k}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {p}")));
    }
    Ok(n_tilde as f64 * weight_log2_prob(k, m, p).exp2())
}

/// `e^{-λ} λ^n / n!`.
pub fn poisson_pmf(lambda: f64, n: u64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    Ok((-lambda + n as f64 * lambda.ln() - ln_factorial(n)).exp())
}

/// `Po(λ)` on `0..=n_max`, with the upper tail summed directly rather than
/// taken as a complement.
pub fn poisson_distribution(lambda: f64, n_max: usize) -> Result<CountDistribution> {
    let pmf = (0..=n_max as u64).map(|n| poisson_pmf(lambda, n)).collect::<Result<Vec<_>>>()?;
    let mut tail = KahanSum::default();
    let mut n = n_max as u64 + 1;
    loop {
        let t = poisson_pmf(lambda, n)?;
        tail.add(t);
        if (n as f64 > lambda && t < 1e-20 * tail.value()) || t == 0.0 && n as f64 > lambda {
            break;
        }
        n += 1;
    }
    CountDistribution::new(pmf, tail.value(), SupportKind::Poisson { lambda })
}

/// Total variation distance, `½ Σ |P(n) − Q(n)|` with the tails as one more
/// outcome. Laws with different `n_max` are compared on the coarser grid.
pub fn tv_distance(a: &CountDistribution, b: &CountDistribution) -> Result<f64> {
    a.check(1e-6)?;
    b.check(1e-6)?;
    let n_max = a.n_max().min(b.n_max());
    let (a, b) = (a.truncated(n_max), b.truncated(n_max));
    let mut acc = KahanSum::default();
    for (x, y) in a.pmf.iter().zip(&b.pmf) {
        acc.add((x - y).abs());
    }
    acc.add((a.tail - b.tail).abs());
    Ok((0.5 * acc.value()).clamp(0.0, 1.0))
}

/// How `E[I_i I_j]` is obtained in [`stein_chen_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Exact, by enumerating the weight class.
    BruteForce,
    /// Upper bounds on `E[I_i I_j]` per overlap (requires `p > 1/2`).
    AnalyticBound,
}

/// Edge contribution of one window offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetTerm {
    /// Overlap `ℓ = k - |i - j|`.
    pub ell: u32,
    /// Number of unordered pairs at this offset among `N_k` windows.
    pub edges: u64,
    pub pair_mean: f64,
    pub contribution: f64,
}

/// Itemized Stein–Chen bound on `d_TV(M̈_k, Po(λ_k))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvBoundReport {
    pub k: u32,
    pub p: f64,
    pub c: f64,
    pub lambda: f64,
    pub n_k: u32,
    pub n_windows: u64,
    pub q: f64,
    pub lambda_k: f64,
    pub term_self: f64,
    pub term_edges: f64,
    pub bound: f64,
    pub mode: BoundMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_offset: Option<Vec<OffsetTerm>>,
}

impl TvBoundReport {
    pub fn to_json(&self, verbose: bool) -> Result<String> {
        let mut r = self.clone();
        if !verbose {
            r.per_offset = None;
        }
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

/// Stein–Chen bound for the windows `1..=N_k` of the conditional
/// intersecting model with dependency graph `{(i, j) : 0 < |i - j| < k}`.
pub fn stein_chen_bound(k: u32, p: f64, c: f64, lambda: f64, mode: BoundMode) -> Result<TvBoundReport> {
    let params = ModelParams::new(p, k)?;
    let fw = FixedWeightSpec::from_params(&params, c, lambda)?;
    if k < 2 {
        return Err(Error::Range("Stein–Chen bound needs k >= 2".into()));
    }
    let n_windows = resolve_regime(&RegimeRule::ConditionalPoisson { c, lambda }, &params)?;
    let q = fw.log2_q(&params).exp2();
    let lambda_k = realized_mean(n_windows, k, fw.n_k, p, lambda);

    let pair_means: Vec<f64> = match mode {
        BoundMode::BruteForce => {
            if k > ENUMERATION_MAX_K {
                return Err(Error::Guard(format!(
                    "brute-force bound needs k <= {ENUMERATION_MAX_K}, got {k}"
                )));
            }
            indicator_product_means(k, fw.n_k, p)?
        }
        BoundMode::AnalyticBound => {
            if p <= 0.5 {
                return Err(Error::Domain("analytic bound requires p > 1/2".into()));
            }
            let class_mass = fixed_weight_mass(k, fw.n_k, p)?.exact;
            let agree = p * p + (1.0 - p) * (1.0 - p);
            let sqrt_k = (k as f64).sqrt();
            (1..k)
                .map(|ell| {
                    if (ell as f64) < sqrt_k {
                        q * q * (1.0 - p).powi(-(ell as i32))
                    } else {
                        q * agree.powi(ell as i32) / class_mass
                    }
                })
                .collect()
        }
    };

    let per_offset: Vec<OffsetTerm> = pair_means
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let ell = i as u32 + 1;
            let edges = n_windows.saturating_sub((k - ell) as u64);
            OffsetTerm { ell, edges, pair_mean: e, contribution: edges as f64 * (q * q + e) }
        })
        .collect();
    let contributions: Vec<f64> = per_offset.iter().map(|t| t.contribution).collect();
    let term_self = n_windows as f64 * q * q;
    let term_edges = pairwise_sum(&contributions);
    let bound = lambda_k.recip().min(1.0) * (term_self + term_edges);

    Ok(TvBoundReport {
        k,
        p,
        c,
        lambda,
        n_k: fw.n_k,
        n_windows,
        q,
        lambda_k,
        term_self,
        term_edges,
        bound,
        mode,
        per_offset: Some(per_offset),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Joint enumeration of the word and all blocks; accumulates integer
    /// counts per (ones, matches) and applies the weights at the end.
    fn exhaustive(k: u32, n_tilde: u32, p: f64) -> Vec<f64> {
        let total_bits = (n_tilde + 1) * k;
        let mask = (1u64 << k) - 1;
        let mut hist = vec![vec![0u64; n_tilde as usize + 1]; total_bits as usize + 1];
        for a in 0..(1u64 << total_bits) {
            let w = a & mask;
            let mut m = 0;
            for j in 1..=n_tilde {
                if (a >> (j * k)) & mask == w {
                    m += 1;
                }
            }
            hist[a.count_ones() as usize][m] += 1;
        }
        let mut out = vec![0.0; n_tilde as usize + 1];
        for (ones, row) in hist.iter().enumerate() {
            let wgt = p.powi(ones as i32) * (1.0 - p).powi(total_bits as i32 - ones as i32);
            for (m, &c) in row.iter().enumerate() {
                out[m] += c as f64 * wgt;
            }
        }
        out
    }

    #[test]
    fn single_bit_single_block() {
        let s = AnnealedSpec::new(1, 0.7, 1, 5).unwrap();
        assert!((annealed_pmf(&s, 1).unwrap() - 0.58).abs() < 1e-15);
        assert!((annealed_pmf(&s, 0).unwrap() - 0.42).abs() < 1e-15);
        assert!(annealed_pmf(&s, 2).is_err());
    }

    #[test]
    fn small_exhaustive() {
        for p in [0.3, 0.5, 0.7] {
            let e = exhaustive(2, 2, p);
            let s = AnnealedSpec::new(2, p, 2, 2).unwrap();
            for n in 0..=2 {
                assert!((annealed_pmf(&s, n).unwrap() - e[n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization() {
        for k in 1..=10u32 {
            for n_tilde in [1u64, 2, 7, 30, 100] {
                let s = AnnealedSpec::new(k, 0.63, n_tilde, n_tilde as usize).unwrap();
                let total: f64 = (0..=n_tilde as usize).map(|n| annealed_pmf(&s, n).unwrap()).sum();
                assert!((total - 1.0).abs() < 1e-9, "k={k} Ñ={n_tilde} total={total}");
            }
        }
    }

    #[test]
    fn label_swap_is_exact() {
        for (p, q) in [(0.6, 0.4), (0.75, 0.25), (0.7, 0.30000000000000004)] {
            assert_eq!(1.0 - p, q);
            for k in [3u32, 10, 57] {
                let a = AnnealedSpec::new(k, p, 1000, 4).unwrap();
                let b = AnnealedSpec::new(k, q, 1000, 4).unwrap();
                for n in 0..=4 {
                    assert_eq!(annealed_pmf(&a, n).unwrap(), annealed_pmf(&b, n).unwrap());
                }
            }
        }
    }

    #[test]
    fn mean_identities() {
        let s = AnnealedSpec::new(7, 0.7, 1, 1).unwrap();
        assert!((annealed_mean(&s).unwrap() - match_prob(7, 0.7).unwrap()).abs() < 1e-16);
        let s = AnnealedSpec::new(6, 0.7, 1000, 1000).unwrap();
        let by_pmf: f64 = (0..=1000).map(|n| n as f64 * annealed_pmf(&s, n).unwrap()).sum();
        assert!((annealed_mean(&s).unwrap() - by_pmf).abs() < 1e-8);
        let d = AnnealedSpec::new(6, 0.7, 2000, 0).unwrap();
        assert!((annealed_mean(&d).unwrap() - 2.0 * annealed_mean(&s).unwrap()).abs() < 1e-12);
        // match probability alone underflows here
        let big = AnnealedSpec::from_log2(4096, 0.6, 4000.0, 0).unwrap();
        let log2_mean = 4000.0 + 4096.0 * 0.52f64.log2();
        let m = annealed_mean(&big).unwrap();
        assert!((m.log2() - log2_mean).abs() < 1e-9, "mean {m:e}");
    }

    #[test]
    fn conditional_mean_values() {
        assert!((conditional_mean_fixed_weight(3, 3, 0.7, 10).unwrap() - 3.43).abs() < 1e-12);
        assert!(conditional_mean_fixed_weight(3, 4, 0.7, 10).is_err());
    }

    #[test]
    fn huge_window_count() {
        let s = AnnealedSpec::from_log2(4096, 0.6, 3977.0, 3).unwrap();
        let d = annealed_distribution(&s).unwrap();
        assert!(d.pmf[0] > 0.4 && d.pmf[0] < 0.6);
        assert!(AnnealedSpec::from_log2(4, 0.6, 1e6, 3).is_err());
    }

    #[test]
    fn poisson_values() {
        let e = (-1.0f64).exp();
        assert!((poisson_pmf(1.0, 0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((poisson_pmf(1.0, 1).unwrap() - e).abs() < 1e-15);
        let s: f64 = (0..=50).map(|n| poisson_pmf(1.0, n).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(poisson_pmf(3.0, 10_000).unwrap() >= 0.0);
        let far = poisson_pmf(5_000.0, 5_000).unwrap();
        // Stirling: 1/sqrt(2π·5000)
        assert!((far / (2.0 * std::f64::consts::PI * 5000.0).sqrt().recip() - 1.0).abs() < 1e-4);
        assert!(poisson_pmf(0.0, 1).is_err());
    }

    #[test]
    fn tv_values() {
        let po = poisson_distribution(1.0, 40).unwrap();
        assert_eq!(tv_distance(&po, &po).unwrap(), 0.0);
        let mut pt = vec![0.0; 41];
        pt[0] = 1.0;
        let point = CountDistribution::new(pt, 0.0, SupportKind::Empirical).unwrap();
        assert!((tv_distance(&point, &po).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-14);
        let po2 = poisson_distribution(1.001, 40).unwrap();
        let tv = tv_distance(&po, &po2).unwrap();
        // direct mpmath summation: 3.6787937988884955e-4
        assert!((tv - 3.678_793_798_888_495_5e-4).abs() < 1e-12);
        let bad = CountDistribution { pmf: vec![0.5], tail: 0.1, support: SupportKind::Empirical };
        assert!(tv_distance(&bad, &po).is_err());
    }

    #[test]
    fn stein_chen_small() {
        let r = stein_chen_bound(16, 0.6, 0.0, 1.0, BoundMode::BruteForce).unwrap();
        assert!(r.bound.is_finite() && r.bound > 0.0 && r.bound < 1.0);
        assert!(r.lambda_k <= 1.0 && r.lambda_k > 1.0 - r.q);
        let a = stein_chen_bound(16, 0.6, 0.0, 1.0, BoundMode::AnalyticBound).unwrap();
        assert!(a.bound >= r.bound);
        assert!(stein_chen_bound(16, 0.5, 0.0, 1.0, BoundMode::AnalyticBound).is_err());
        assert!(stein_chen_bound(30, 0.6, 0.0, 1.0, BoundMode::BruteForce).is_err());
        let json = r.to_json(false).unwrap();
        assert!(!json.contains("per_offset"));
        assert!(r.to_json(true).unwrap().contains("per_offset"));
    }
}
