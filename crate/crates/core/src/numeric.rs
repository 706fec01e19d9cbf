//! Small numerical helpers shared across modules.

use std::f64::consts::LN_2;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = KahanSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Pairwise sum with a fixed split order, so the result does not depend on
/// how the input was produced.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => compensated_sum(xs.iter().copied()),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// `ln(n!)`, exact table for small `n`, log-gamma beyond.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 32 {
        let mut acc = 0.0;
        for j in 2..=n {
            acc += (j as f64).ln();
        }
        return acc;
    }
    libm::lgamma(n as f64 + 1.0)
}

pub(crate) fn ln_binomial(n: u64, r: u64) -> f64 {
    debug_assert!(r <= n);
    ln_factorial(n) - ln_factorial(r) - ln_factorial(n - r)
}

/// `(ln p, ln(1-p))`, accurate at both ends of `(0,1)`.
///
/// The pair is computed from `min(p, 1-p)` so that swapping `p` and `1-p`
/// swaps the outputs bit for bit whenever `1-p` is exact in floating point.
pub(crate) fn ln_pair(p: f64) -> (f64, f64) {
    if p >= 0.5 {
        let r = 1.0 - p;
        ((-r).ln_1p(), r.ln())
    } else {
        (p.ln(), (-p).ln_1p())
    }
}

/// `log2(1 - p)` without cancellation for small `p`.
pub(crate) fn log2_complement(p: f64) -> f64 {
    (-p).ln_1p() / LN_2
}
