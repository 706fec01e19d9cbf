//! Exact occurrence counting of `k`-bit windows and the count distributions
//! derived from it.
//!
//! Window `j` (0-based) of a sequence `x` is `x_j … x_{j+k-1}` packed with
//! `x_j` in bit 0; reports use the 1-based window index `j + 1`.

use std::io::Write;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{fixed_weight_count, weight_log2_prob, MAX_K};
use crate::error::{Error, Result};
use crate::model::{low_mask, sample_fixed_weight_word, sample_word, BitSequence, RngStream, Word};
use crate::numeric::KahanSum;

/// Word lengths up to this use a flat array of `2^k` counters.
const DENSE_MAX_K: u32 = 24;

/// Largest `k` for which fixed-weight classes are enumerated word by word.
pub const ENUMERATION_MAX_K: u32 = 28;

/// Largest `k` for which all `2^k` words are enumerated.
pub const ALL_WORDS_MAX_K: u32 = 24;

/// Bits a single honest non-intersecting trial may materialize.
pub const HONEST_MAX_BITS: u64 = 1 << 40;

/// Variate indices reserved per simulated trial.
const TRIAL_STRIDE_LOG2: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Storage {
    Dense(Vec<u32>),
    /// Sorted by window value, counts positive.
    Sparse(Vec<(u64, u32)>),
}

/// Exact multiset of the first `n_windows` windows of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    k: u32,
    n_windows: u64,
    weight_filter: Option<u32>,
    saturated: bool,
    storage: Storage,
}

/// Knobs for [`build_count_table_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountOptions {
    pub threads: usize,
    /// Only record windows of this Hamming weight.
    pub weight_filter: Option<u32>,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self { threads: 1, weight_filter: None }
    }
}

impl CountTable {
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n_windows(&self) -> u64 {
        self.n_windows
    }

    pub fn weight_filter(&self) -> Option<u32> {
        self.weight_filter
    }

    /// Whether any counter hit `u32::MAX`.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    pub fn get(&self, value: u64) -> u32 {
        match &self.storage {
            Storage::Dense(v) => v.get(value as usize).copied().unwrap_or(0),
            Storage::Sparse(v) => match v.binary_search_by_key(&value, |e| e.0) {
                Ok(i) => v[i].1,
                Err(_) => 0,
            },
        }
    }

    /// `(window value, count)` pairs with positive count, ascending by value.
    pub fn entries(&self) -> Box<dyn Iterator<Item = (u64, u32)> + '_> {
        match &self.storage {
            Storage::Dense(v) => Box::new(
                v.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (i as u64, c)),
            ),
            Storage::Sparse(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn distinct(&self) -> usize {
        self.entries().count()
    }

    pub fn total(&self) -> u64 {
        self.entries().map(|(_, c)| c as u64).sum()
    }

    /// Bytes held by the counters.
    pub fn heap_bytes(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.capacity() * std::mem::size_of::<u32>(),
            Storage::Sparse(v) => v.capacity() * std::mem::size_of::<(u64, u32)>(),
        }
    }

    /// Write `window_hex,weight,count` rows sorted by window value.
    ///
    /// `window_hex` is the packed value (letter `j+1` in bit `j`) in
    /// lowercase hex, zero-padded to `ceil(k/4)` digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let digits = self.k.div_ceil(4) as usize;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window_hex", "weight", "count"])?;
        for (v, c) in self.entries() {
            w.write_record([
                format!("{v:0digits$x}"),
                v.count_ones().to_string(),
                c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Count the windows starting at positions `1..=n` of `x` (single thread).
pub fn build_count_table(x: &BitSequence, k: u32, n: u64) -> Result<CountTable> {
    build_count_table_with(x, k, n, &CountOptions::default())
}

/// Count windows with the given options. The result does not depend on the
/// thread count: chunks overlap by `k - 1` bits and are merged by addition.
pub fn build_count_table_with(
    x: &BitSequence,
    k: u32,
    n: u64,
    opts: &CountOptions,
) -> Result<CountTable> {
    if k == 0 || k > MAX_K {
        return Err(Error::Range(format!("k must lie in [1, {MAX_K}], got {k}")));
    }
    if n == 0 {
        return Err(Error::Range("number of windows must be positive".into()));
    }
    if let Some(w) = opts.weight_filter {
        if w > k {
            return Err(Error::Range(format!("weight filter {w} exceeds k = {k}")));
        }
    }
    let needed = n + k as u64 - 1;
    if x.len() < needed {
        return Err(Error::InsufficientLength { needed, available: x.len() });
    }
    let threads = opts.threads.max(1);
    let chunk_len = n.div_ceil(threads as u64);
    let ranges: Vec<(u64, u64)> = (0..threads as u64)
        .map(|t| (t * chunk_len, ((t + 1) * chunk_len).min(n)))
        .filter(|(s, e)| s < e)
        .collect();
    let dense = use_dense(k, n);

    let run = || -> Vec<(Storage, u64)> {
        ranges
            .par_iter()
            .map(|&(s, e)| count_range(x, k, s, e, opts.weight_filter, dense))
            .collect()
    };
    let parts = if threads == 1 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?
            .install(run)
    };

    let mut skipped = 0u64;
    let mut merged: Option<Storage> = None;
    for (part, skip) in parts {
        skipped += skip;
        merged = Some(match merged {
            None => part,
            Some(acc) => merge_storage(acc, part),
        });
    }
    let storage = merged.expect("at least one chunk");
    let saturated = match &storage {
        Storage::Dense(v) => v.contains(&u32::MAX),
        Storage::Sparse(v) => v.iter().any(|e| e.1 == u32::MAX),
    };
    let table = CountTable { k, n_windows: n, weight_filter: opts.weight_filter, saturated, storage };
    if !saturated && table.total() + skipped != n {
        return Err(Error::Invariant(format!(
            "count conservation failed: {} counted + {skipped} skipped != {n}",
            table.total()
        )));
    }
    Ok(table)
}

fn use_dense(k: u32, n: u64) -> bool {
    k <= 16 || (k <= DENSE_MAX_K && n >= (1u64 << k) / 8)
}

/// Count windows starting at `start..end` (0-based). Returns the storage and
/// the number of windows rejected by the weight filter.
fn count_range(
    x: &BitSequence,
    k: u32,
    start: u64,
    end: u64,
    filter: Option<u32>,
    dense: bool,
) -> (Storage, u64) {
    let top = k - 1;
    let words = x.words();
    let mut v = x.window(start, k);
    let mut weight = v.count_ones();
    let mut skipped = 0u64;

    let step = |v: &mut u64, weight: &mut u32, j: u64| {
        // Slide from window j-1 to window j.
        let pos = j + top as u64;
        let bit = (words[(pos / 64) as usize] >> (pos % 64)) & 1;
        *weight = *weight - (*v & 1) as u32 + bit as u32;
        *v = (*v >> 1) | (bit << top);
    };

    if dense {
        let mut counts = vec![0u32; 1usize << k];
        let mut j = start;
        loop {
            if filter.is_none_or(|w| w == weight) {
                let c = &mut counts[v as usize];
                *c = c.saturating_add(1);
            } else {
                skipped += 1;
            }
            j += 1;
            if j >= end {
                break;
            }
            step(&mut v, &mut weight, j);
        }
        (Storage::Dense(counts), skipped)
    } else {
        let mut keys = Vec::with_capacity((end - start) as usize);
        let mut j = start;
        loop {
            if filter.is_none_or(|w| w == weight) {
                keys.push(v);
            } else {
                skipped += 1;
            }
            j += 1;
            if j >= end {
                break;
            }
            step(&mut v, &mut weight, j);
        }
        keys.sort_unstable();
        let mut out: Vec<(u64, u32)> = Vec::new();
        let mut i = 0;
        while i < keys.len() {
            let key = keys[i];
            let mut run = 0u64;
            while i < keys.len() && keys[i] == key {
                run += 1;
                i += 1;
            }
            out.push((key, run.min(u32::MAX as u64) as u32));
        }
        (Storage::Sparse(out), skipped)
    }
}

fn merge_storage(a: Storage, b: Storage) -> Storage {
    match (a, b) {
        (Storage::Dense(mut a), Storage::Dense(b)) => {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.saturating_add(y);
            }
            Storage::Dense(a)
        }
        (Storage::Sparse(a), Storage::Sparse(b)) => {
            let mut out = Vec::with_capacity(a.len() + b.len());
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                match a[i].0.cmp(&b[j].0) {
                    std::cmp::Ordering::Less => {
                        out.push(a[i]);
                        i += 1;
                    }
                    std::cmp::Ordering::Greater => {
                        out.push(b[j]);
                        j += 1;
                    }
                    std::cmp::Ordering::Equal => {
                        out.push((a[i].0, a[i].1.saturating_add(b[j].1)));
                        i += 1;
                        j += 1;
                    }
                }
            }
            out.extend_from_slice(&a[i..]);
            out.extend_from_slice(&b[j..]);
            Storage::Sparse(out)
        }
        _ => unreachable!("all chunks share one storage kind"),
    }
}

/// `M_k^x(ω)`: occurrences of `omega` among the counted windows.
pub fn count_word(table: &CountTable, omega: &Word) -> Result<u64> {
    if omega.width() != table.k {
        return Err(Error::WidthMismatch { expected: table.k, found: omega.width() });
    }
    if let Some(w) = table.weight_filter {
        if w != omega.weight() {
            return Err(Error::Domain(format!(
                "table only records windows of weight {w}, word has weight {}",
                omega.weight()
            )));
        }
    }
    Ok(table.get(omega.value()) as u64)
}

/// Which word law a count distribution refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportKind {
    /// Word drawn from `Ber^k` with the given `p`.
    AllWords { p: f64 },
    /// Word drawn uniformly from the weight-`n_k` class.
    FixedWeight { n_k: u32 },
    /// A Poisson reference law.
    Poisson { lambda: f64 },
    /// The annealed non-intersecting law.
    Annealed,
    /// An empirical law from samples.
    Empirical,
}

/// A law on `{0, 1, …}` stored as `pmf[0..=n_max]` plus the mass above `n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub pmf: Vec<f64>,
    pub tail: f64,
    pub support: SupportKind,
}

/// Normalization tolerance enforced on construction.
pub const NORMALIZATION_TOL: f64 = 1e-9;

impl CountDistribution {
    pub fn new(pmf: Vec<f64>, tail: f64, support: SupportKind) -> Result<Self> {
        let d = Self { pmf, tail, support };
        d.check(NORMALIZATION_TOL)?;
        Ok(d)
    }

    /// Build from samples of a count variable.
    pub fn from_samples(samples: &[u64], n_max: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Range("no samples".into()));
        }
        let mut hist = vec![0u64; n_max + 1];
        let mut over = 0u64;
        for &s in samples {
            match hist.get_mut(s as usize) {
                Some(h) => *h += 1,
                None => over += 1,
            }
        }
        let t = samples.len() as f64;
        Self::new(
            hist.into_iter().map(|h| h as f64 / t).collect(),
            over as f64 / t,
            SupportKind::Empirical,
        )
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let bad = self
            .pmf
            .iter()
            .chain(std::iter::once(&self.tail))
            .any(|&v| !(v >= -tol && v <= 1.0 + tol));
        let m = self.mass();
        if bad || (m - 1.0).abs() > tol {
            return Err(Error::Normalization(m));
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn mass(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &v in &self.pmf {
            acc.add(v);
        }
        acc.add(self.tail);
        acc.value()
    }

    /// `P(X = n)` for `n <= n_max`.
    pub fn prob(&self, n: usize) -> f64 {
        self.pmf.get(n).copied().unwrap_or(0.0)
    }

    /// The same law with every count above `n_max` folded into the tail.
    pub fn truncated(&self, n_max: usize) -> Self {
        if n_max >= self.n_max() {
            return self.clone();
        }
        let mut acc = KahanSum::default();
        acc.add(self.tail);
        for &v in &self.pmf[n_max + 1..] {
            acc.add(v);
        }
        Self { pmf: self.pmf[..=n_max].to_vec(), tail: acc.value(), support: self.support }
    }
}

/// Law of `M_k^x(ω)` for `ω` uniform on the weight-`n_k` words, computed
/// exactly from the table by bucketing (no enumeration of the class).
pub fn quenched_distribution_fixed_weight(
    table: &CountTable,
    n_k: u32,
    n_max: usize,
) -> Result<CountDistribution> {
    if n_k > table.k {
        return Err(Error::Range(format!("weight {n_k} exceeds k = {}", table.k)));
    }
    if let Some(w) = table.weight_filter {
        if w != n_k {
            return Err(Error::Domain(format!(
                "table filtered to weight {w}, requested weight {n_k}"
            )));
        }
    }
    let class = fixed_weight_count(table.k, n_k)?;
    let mut hist = vec![0u128; n_max + 1];
    let mut over = 0u128;
    let mut distinct = 0u128;
    for (v, c) in table.entries() {
        if v.count_ones() != n_k {
            continue;
        }
        distinct += 1;
        match hist.get_mut(c as usize) {
            Some(h) => *h += 1,
            None => over += 1,
        }
    }
    hist[0] += class - distinct;
    let denom = class as f64;
    CountDistribution::new(
        hist.into_iter().map(|h| h as f64 / denom).collect(),
        over as f64 / denom,
        SupportKind::FixedWeight { n_k },
    )
}

/// Law of `M_k^x(ω)` for `ω ~ Ber^k`, computed exactly from the table.
///
/// Windows are bucketed by (count, weight) in integers; each bucket then
/// carries mass `multiplicity * p^w (1-p)^{k-w}`. The zero bucket is the
/// complement within each weight class.
pub fn quenched_distribution_all_words(
    table: &CountTable,
    p: f64,
    n_max: usize,
) -> Result<CountDistribution> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {p}")));
    }
    if table.weight_filter.is_some() {
        return Err(Error::Domain("all-words distribution needs an unfiltered table".into()));
    }
    let k = table.k;
    let kw = k as usize + 1;
    let mut by_count = vec![0u64; (n_max + 1) * kw];
    let mut over = vec![0u64; kw];
    let mut present = vec![0u64; kw];
    for (v, c) in table.entries() {
        let w = v.count_ones() as usize;
        present[w] += 1;
        if (c as usize) <= n_max {
            by_count[c as usize * kw + w] += 1;
        } else {
            over[w] += 1;
        }
    }
    let word_prob: Vec<f64> = (0..=k).map(|w| weight_log2_prob(k, w, p).exp2()).collect();
    let mass = |counts: &[u64]| {
        let mut acc = KahanSum::default();
        for (w, &m) in counts.iter().enumerate() {
            if m > 0 {
                acc.add(m as f64 * word_prob[w]);
            }
        }
        acc.value()
    };
    let mut pmf = Vec::with_capacity(n_max + 1);
    let mut zero = KahanSum::default();
    for w in 0..=k {
        let absent = fixed_weight_count(k, w)? - present[w as usize] as u128;
        zero.add(absent as f64 * word_prob[w as usize]);
    }
    pmf.push(zero.value() + mass(&by_count[..kw]));
    for n in 1..=n_max {
        pmf.push(mass(&by_count[n * kw..(n + 1) * kw]));
    }
    CountDistribution::new(pmf, mass(&over), SupportKind::AllWords { p })
}

/// How [`simulate_nonintersecting`] produces a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Materialize every block `Z^(j)` and compare it with `W`.
    Honest,
    /// Draw the match count as `Binomial(N, Ber^k(W))`.
    Fast,
}

/// How the target word `W` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordLaw {
    Bernoulli,
    /// Uniform over words of the given weight, i.e. `W` conditioned on `|W| = m`.
    FixedWeight(u32),
}

/// Samples of `M̃_k`, the number of blocks among `n_tilde` independent
/// `Ber^k` blocks equal to an independent word `W ~ Ber^k`.
///
/// Trial `t` reads its variates from index `t * 2^40` of the stream, so the
/// two modes draw the same `W` on every trial.
pub fn simulate_nonintersecting(
    rng: &RngStream,
    k: u32,
    n_tilde: u64,
    p: f64,
    trials: u64,
    mode: SimMode,
) -> Result<Vec<u64>> {
    simulate_nonintersecting_with(rng, k, n_tilde, p, trials, mode, WordLaw::Bernoulli)
}

pub fn simulate_nonintersecting_with(
    rng: &RngStream,
    k: u32,
    n_tilde: u64,
    p: f64,
    trials: u64,
    mode: SimMode,
    law: WordLaw,
) -> Result<Vec<u64>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {p}")));
    }
    if k == 0 || k > MAX_K {
        return Err(Error::Range(format!("k must lie in [1, {MAX_K}], got {k}")));
    }
    if trials == 0 || trials > 1 << (64 - TRIAL_STRIDE_LOG2) {
        return Err(Error::Range(format!("trials must lie in [1, 2^24], got {trials}")));
    }
    if mode == SimMode::Honest && (n_tilde as u128 + 1) * k as u128 > HONEST_MAX_BITS as u128 {
        return Err(Error::Overflow(format!(
            "honest simulation of {n_tilde} blocks of {k} bits exceeds 2^40 bits"
        )));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut cursor = rng.cursor(t << TRIAL_STRIDE_LOG2);
            let w = match law {
                WordLaw::Bernoulli => sample_word(&mut cursor, k, p)?,
                WordLaw::FixedWeight(m) => sample_fixed_weight_word(&mut cursor, k, m)?,
            };
            match mode {
                SimMode::Honest => {
                    let mut hits = 0u64;
                    for _ in 0..n_tilde {
                        if sample_word(&mut cursor, k, p)?.value() == w.value() {
                            hits += 1;
                        }
                    }
                    Ok(hits)
                }
                SimMode::Fast => {
                    let q = weight_log2_prob(k, w.weight(), p).exp2();
                    let bin = Binomial::new(n_tilde, q)
                        .map_err(|e| Error::Domain(format!("binomial: {e}")))?;
                    Ok(bin.sample(&mut cursor))
                }
            }
        })
        .collect()
}

/// Enumerate the words of weight `n` in `k` bits in increasing order.
pub(crate) fn for_each_weight_word(k: u32, n: u32, mut f: impl FnMut(u64)) {
    if n == 0 {
        f(0);
        return;
    }
    let limit = low_mask(k);
    let mut v = low_mask(n);
    loop {
        f(v);
        // Gosper's hack: next integer with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v.wrapping_add(c);
        if r == 0 || r > limit {
            break;
        }
        let next = (((r ^ v) >> 2) / c) | r;
        if next > limit {
            break;
        }
        v = next;
    }
}

/// Whether the first `ell` letters of a `k`-letter word equal its last `ell`.
#[inline]
pub(crate) fn self_overlaps(v: u64, k: u32, ell: u32) -> bool {
    (v & low_mask(ell)) == (v >> (k - ell))
}

fn check_overlap_args(k: u32, n_k: u32, ell: u32, max_k: u32) -> Result<()> {
    if k < 2 || k > max_k {
        return Err(Error::Guard(format!("enumeration requires 2 <= k <= {max_k}, got {k}")));
    }
    if n_k > k {
        return Err(Error::Range(format!("weight {n_k} exceeds k = {k}")));
    }
    if ell == 0 || ell >= k {
        return Err(Error::Range(format!("overlap must lie in [1, {}], got {ell}", k - 1)));
    }
    Ok(())
}

/// `Z_ℓ^k`: weight-`n_k` words whose first `ell` letters equal their last `ell`.
pub fn overlap_class(k: u32, n_k: u32, ell: u32) -> Result<Vec<Word>> {
    check_overlap_args(k, n_k, ell, ENUMERATION_MAX_K)?;
    let mut out = Vec::new();
    for_each_weight_word(k, n_k, |v| {
        if self_overlaps(v, k, ell) {
            out.push(Word::new(v, k).expect("in range"));
        }
    });
    Ok(out)
}

/// `E[I_i I_j]` for two windows at offset `k - ell` under a fixed sequence
/// law `Ber(p)^N` and a word uniform on the weight-`n_k` class.
///
/// Enumerates the class; for `ω ∈ Z_ℓ^k` with prefix weight `u`, the joint
/// event fixes `2k - ell` letters of which `2 n_k - u` are ones.
pub fn indicator_product_mean_bruteforce(k: u32, n_k: u32, ell: u32, p: f64) -> Result<f64> {
    check_overlap_args(k, n_k, ell, ENUMERATION_MAX_K)?;
    Ok(indicator_product_means(k, n_k, p)?[ell as usize - 1])
}

/// [`indicator_product_mean_bruteforce`] for every `ell = 1..k-1` in one
/// pass over the class.
pub fn indicator_product_means(k: u32, n_k: u32, p: f64) -> Result<Vec<f64>> {
    check_overlap_args(k, n_k, 1, ENUMERATION_MAX_K)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {p}")));
    }
    // hist[ell-1][u] = #{ω ∈ Z_ℓ^k : prefix weight u}
    let mut hist = vec![vec![0u64; k as usize]; k as usize - 1];
    for_each_weight_word(k, n_k, |v| {
        for ell in 1..k {
            if self_overlaps(v, k, ell) {
                hist[ell as usize - 1][(v & low_mask(ell)).count_ones() as usize] += 1;
            }
        }
    });
    let class = fixed_weight_count(k, n_k)? as f64;
    Ok(hist
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let ell = i as u32 + 1;
            let mut acc = KahanSum::default();
            for (u, &m) in row.iter().enumerate() {
                if m > 0 {
                    let u = u as u32;
                    let lp = weight_log2_prob(2 * k - ell, 2 * n_k - u, p);
                    acc.add(m as f64 * lp.exp2());
                }
            }
            acc.value() / class
        })
        .collect())
}

/// `E[I_i I_j]` at overlap `ell` with the word drawn from `Ber^k` itself
/// (no weight conditioning), by enumerating all `2^k` words.
pub fn indicator_product_mean_all_words(k: u32, ell: u32, p: f64) -> Result<f64> {
    check_overlap_args(k, 0, ell, ALL_WORDS_MAX_K)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie strictly inside (0,1), got {p}")));
    }
    let mut hist = vec![vec![0u64; ell as usize + 1]; k as usize + 1];
    for v in 0..(1u64 << k) {
        if self_overlaps(v, k, ell) {
            hist[v.count_ones() as usize][(v & low_mask(ell)).count_ones() as usize] += 1;
        }
    }
    let mut acc = KahanSum::default();
    for (w, row) in hist.iter().enumerate() {
        for (u, &m) in row.iter().enumerate() {
            if m > 0 {
                let (w, u) = (w as u32, u as u32);
                let joint = weight_log2_prob(2 * k - ell, 2 * w - u, p);
                let word = weight_log2_prob(k, w, p);
                acc.add(m as f64 * (joint + word).exp2());
            }
        }
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_sequence;

    fn naive_counts(x: &BitSequence, k: u32, n: u64) -> std::collections::BTreeMap<u64, u32> {
        let mut m = std::collections::BTreeMap::new();
        for j in 0..n {
            let mut v = 0u64;
            for t in 0..k as u64 {
                v |= (x.get(j + t) as u64) << t;
            }
            *m.entry(v).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn hand_example() {
        let x = BitSequence::parse("0110110").unwrap();
        let t = build_count_table(&x, 3, 5).unwrap();
        assert_eq!(count_word(&t, &Word::parse("011").unwrap()).unwrap(), 2);
        assert_eq!(count_word(&t, &Word::parse("110").unwrap()).unwrap(), 2);
        assert_eq!(count_word(&t, &Word::parse("101").unwrap()).unwrap(), 1);
        assert_eq!(count_word(&t, &Word::parse("111").unwrap()).unwrap(), 0);
        assert_eq!(t.distinct(), 3);
        let all: u64 = (0..8).map(|v| count_word(&t, &Word::new(v, 3).unwrap()).unwrap()).sum();
        assert_eq!(all, 5);
        assert!(count_word(&t, &Word::parse("0110").unwrap()).is_err());
    }

    #[test]
    fn all_zero_sequence() {
        let x = BitSequence::zeros(104);
        let t = build_count_table(&x, 5, 100).unwrap();
        assert_eq!(t.entries().collect::<Vec<_>>(), vec![(0, 100)]);
    }

    #[test]
    fn insufficient_length() {
        let x = BitSequence::zeros(10);
        assert!(matches!(
            build_count_table(&x, 4, 8),
            Err(Error::InsufficientLength { needed: 11, available: 10 })
        ));
    }

    #[test]
    fn matches_naive_small() {
        for seed in 0..20u64 {
            let x = sample_sequence(&RngStream::new(seed, 0), 19, 0.6);
            for k in 1..=4u32 {
                let n = 16;
                let t = build_count_table(&x, k, n).unwrap();
                let naive = naive_counts(&x, k, n);
                assert_eq!(t.entries().collect::<std::collections::BTreeMap<_, _>>(), naive);
            }
        }
    }

    #[test]
    fn sparse_and_dense_agree() {
        let x = sample_sequence(&RngStream::new(3, 3), 5_000, 0.55);
        let dense = build_count_table(&x, 16, 4_000).unwrap();
        let sparse = build_count_table(&x, 22, 4_000).unwrap();
        assert!(matches!(dense.storage, Storage::Dense(_)));
        assert!(matches!(sparse.storage, Storage::Sparse(_)));
        assert_eq!(sparse.entries().collect::<std::collections::BTreeMap<_, _>>(), naive_counts(&x, 22, 4_000));
        assert_eq!(dense.total(), 4_000);
    }

    #[test]
    fn wide_windows() {
        let x = sample_sequence(&RngStream::new(4, 0), 400, 0.5);
        let t = build_count_table(&x, 64, 300).unwrap();
        assert_eq!(t.entries().collect::<std::collections::BTreeMap<_, _>>(), naive_counts(&x, 64, 300));
    }

    #[test]
    fn weight_filter_keeps_one_class() {
        let x = sample_sequence(&RngStream::new(6, 0), 2_000, 0.6);
        let opts = CountOptions { threads: 1, weight_filter: Some(5) };
        let f = build_count_table_with(&x, 8, 1_990, &opts).unwrap();
        let full = build_count_table(&x, 8, 1_990).unwrap();
        let expect: Vec<_> = full.entries().filter(|(v, _)| v.count_ones() == 5).collect();
        assert_eq!(f.entries().collect::<Vec<_>>(), expect);
        assert_eq!(
            quenched_distribution_fixed_weight(&f, 5, 10).unwrap(),
            quenched_distribution_fixed_weight(&full, 5, 10).unwrap()
        );
        assert!(quenched_distribution_fixed_weight(&f, 4, 10).is_err());
        assert!(quenched_distribution_all_words(&f, 0.6, 10).is_err());
    }

    #[test]
    fn thread_count_does_not_change_table() {
        let x = sample_sequence(&RngStream::new(10, 1), 100_000, 0.6);
        for k in [3u32, 12, 20] {
            let one = build_count_table_with(&x, k, 99_000, &CountOptions { threads: 1, weight_filter: None }).unwrap();
            for threads in [2usize, 8] {
                let many = build_count_table_with(&x, k, 99_000, &CountOptions { threads, weight_filter: None }).unwrap();
                assert_eq!(one, many, "k={k} threads={threads}");
            }
        }
    }

    #[test]
    fn fixed_weight_distribution_edge_cases() {
        let x = BitSequence::zeros(40);
        let t = build_count_table(&x, 4, 30).unwrap();
        let d = quenched_distribution_fixed_weight(&t, 0, 10).unwrap();
        assert_eq!(d.tail, 1.0);
        let d = quenched_distribution_fixed_weight(&t, 0, 40).unwrap();
        assert_eq!(d.pmf[30], 1.0);
        let d = quenched_distribution_fixed_weight(&t, 2, 10).unwrap();
        assert_eq!(d.pmf[0], 1.0);
    }

    #[test]
    fn fixed_weight_distribution_matches_enumeration() {
        for seed in 0..10u64 {
            let x = sample_sequence(&RngStream::new(seed, 9), 11, 0.5);
            let t = build_count_table(&x, 4, 8).unwrap();
            let d = quenched_distribution_fixed_weight(&t, 2, 8).unwrap();
            let naive = naive_counts(&x, 4, 8);
            let mut expect = vec![0.0; 9];
            for v in [0b0011u64, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100] {
                expect[*naive.get(&v).unwrap_or(&0) as usize] += 1.0 / 6.0;
            }
            for n in 0..=8 {
                assert!((d.pmf[n] - expect[n]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn all_words_distribution_hand_case() {
        let x = BitSequence::zeros(5);
        let t = build_count_table(&x, 2, 4).unwrap();
        let d = quenched_distribution_all_words(&t, 0.6, 8).unwrap();
        assert!((d.pmf[0] - 0.84).abs() < 1e-15);
        assert!((d.pmf[4] - 0.16).abs() < 1e-15);
        let d = quenched_distribution_all_words(&t, 0.6, 2).unwrap();
        assert!((d.tail - 0.16).abs() < 1e-15);
    }

    #[test]
    fn all_words_distribution_matches_enumeration() {
        let p: f64 = 0.7;
        for seed in 0..10u64 {
            let x = sample_sequence(&RngStream::new(seed, 2), 12, p);
            let t = build_count_table(&x, 3, 10).unwrap();
            let d = quenched_distribution_all_words(&t, p, 10).unwrap();
            let naive = naive_counts(&x, 3, 10);
            let mut expect = vec![0.0; 11];
            for v in 0..8u64 {
                let w = v.count_ones() as i32;
                expect[*naive.get(&v).unwrap_or(&0) as usize] += p.powi(w) * (1.0 - p).powi(3 - w);
            }
            for n in 0..=10 {
                assert!((d.pmf[n] - expect[n]).abs() < 1e-14);
            }
            assert!((d.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export() {
        let x = BitSequence::parse("0110110").unwrap();
        let t = build_count_table(&x, 3, 5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "window_hex,weight,count\n3,2,2\n5,2,1\n6,2,2\n"
        );
    }

    #[test]
    fn overlap_class_example() {
        let z = overlap_class(4, 2, 2).unwrap();
        let words: Vec<String> = z.iter().map(|w| w.to_string()).collect();
        assert_eq!(words.len(), 2);
        assert!(words.contains(&"0101".to_string()));
        assert!(words.contains(&"1010".to_string()));
        for w in &z {
            assert_eq!((w.value() & 0b11).count_ones(), 1);
        }
    }

    #[test]
    fn shift_one_overlap_is_empty_for_mixed_weight() {
        for k in 3..=12u32 {
            for n in 1..k {
                assert!(overlap_class(k, n, k - 1).unwrap().is_empty());
                assert_eq!(indicator_product_mean_bruteforce(k, n, k - 1, 0.6).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn gosper_enumerates_class() {
        for k in 1..=10u32 {
            for n in 0..=k {
                let mut seen = Vec::new();
                for_each_weight_word(k, n, |v| seen.push(v));
                let expect: Vec<u64> = (0..1u64 << k).filter(|v| v.count_ones() == n).collect();
                assert_eq!(seen, expect, "k={k} n={n}");
            }
        }
        let mut count = 0u64;
        for_each_weight_word(64, 62, |_| count += 1);
        assert_eq!(count, 2016);
    }

    #[test]
    fn pair_mean_bounded_by_overlap_inequality() {
        for p in [0.6f64, 0.75] {
            for k in 4..=14u32 {
                let n = crate::analytic::weight_floor(k, p, 0.0).unwrap();
                let q = weight_log2_prob(k, n, p).exp2();
                for ell in 1..k {
                    let e = indicator_product_mean_bruteforce(k, n, ell, p).unwrap();
                    assert!(e <= q * q * (1.0 - p).powi(-(ell as i32)) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn uniform_pair_mean_is_exact_power_of_two() {
        for k in 2..=12u32 {
            for ell in 1..k {
                let e = indicator_product_mean_all_words(k, ell, 0.5).unwrap();
                assert_eq!(e, (-2.0 * k as f64).exp2(), "k={k} ell={ell}");
            }
        }
        // not under the fixed-weight measure: 0101 and 1010 out of six words
        let e = indicator_product_mean_bruteforce(4, 2, 2, 0.5).unwrap();
        assert!((e - 1.0 / 192.0).abs() < 1e-18, "{e}");
    }

    #[test]
    fn honest_overflow_guard() {
        let rng = RngStream::new(1, 1);
        assert!(matches!(
            simulate_nonintersecting(&rng, 64, 1 << 35, 0.5, 1, SimMode::Honest),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn single_block_match_frequency() {
        let rng = RngStream::new(12, 0);
        let trials = 100_000;
        for mode in [SimMode::Honest, SimMode::Fast] {
            let s = simulate_nonintersecting(&rng, 1, 1, 0.7, trials, mode).unwrap();
            let f = s.iter().filter(|&&m| m == 1).count() as f64 / trials as f64;
            // 0.58 ± 4 sigma
            let sigma = (0.58f64 * 0.42 / trials as f64).sqrt();
            assert!((f - 0.58).abs() < 4.0 * sigma, "{mode:?}: {f}");
        }
    }
}
