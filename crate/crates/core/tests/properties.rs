use std::collections::HashMap;

use proptest::prelude::*;

use bernpoisson::analytic::{
    conditional_guard_holds, realized_mean, resolve_regime, weight_floor, word_log_prob,
};
use bernpoisson::counting::{
    build_count_table, build_count_table_with, simulate_nonintersecting,
    simulate_nonintersecting_with, CountOptions, SimMode, WordLaw,
};
use bernpoisson::exact::{annealed_pmf, conditional_mean_fixed_weight, poisson_distribution, tv_distance};
use bernpoisson::model::{sample_sequence, sample_word};
use bernpoisson::{
    AnnealedSpec, BitSequence, CountDistribution, ModelParams, RegimeRule, RngStream, SupportKind,
};

fn law(weights: Vec<f64>) -> CountDistribution {
    let total: f64 = weights.iter().sum();
    let mut pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let tail = pmf.pop().unwrap();
    CountDistribution::new(pmf, tail, SupportKind::Empirical).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conditional_rule_brackets_lambda(
        p_num in 300u32..=900,
        k in 4u32..=60,
        c64 in -64i32..=64,
        lam256 in 16u32..=1024,
    ) {
        let p = p_num as f64 / 1024.0;
        let c = c64 as f64 / 64.0;
        let lambda = lam256 as f64 / 256.0;
        let rule = RegimeRule::ConditionalPoisson { c, lambda };
        let params = ModelParams::new(p, k).unwrap();
        if let (Ok(n_k), Ok(n)) = (weight_floor(k, p, c), resolve_regime(&rule, &params)) {
            prop_assert!(conditional_guard_holds(n, lambda, k, n_k, p));
            let q = (n_k as f64 * p.ln() + (k - n_k) as f64 * (-p).ln_1p()).exp();
            let lk = realized_mean(n, k, n_k, p, lambda);
            prop_assert!(lk <= lambda);
            // strict in exact arithmetic (checked above); a few ulps here
            prop_assert!(lk >= lambda - q - 4.0 * f64::EPSILON * lambda);
        }
    }

    #[test]
    fn tv_is_a_metric(a in weights(), b in weights(), c in weights()) {
        let (a, b, c) = (law(a), law(b), law(c));
        let ab = tv_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, tv_distance(&b, &a).unwrap());
        prop_assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let tri = tv_distance(&a, &c).unwrap() + tv_distance(&c, &b).unwrap();
        prop_assert!(ab <= tri + 1e-15);
    }

    #[test]
    fn label_swap_is_bit_exact(p_num in 1u32..512, k in 1u32..200, n_tilde in 1u64..100_000, n in 0usize..5) {
        let p = p_num as f64 / 1024.0;
        let q = 1.0 - p;
        let n = n.min(n_tilde as usize);
        let a = AnnealedSpec::new(k, p, n_tilde, n).unwrap();
        let b = AnnealedSpec::new(k, q, n_tilde, n).unwrap();
        prop_assert_eq!(annealed_pmf(&a, n).unwrap(), annealed_pmf(&b, n).unwrap());
    }

    #[test]
    fn sparse_tables_match_a_hash_map(seed in any::<u64>(), k in 25u32..=64, n in 1u64..5000) {
        let x = sample_sequence(&RngStream::new(seed, 0), n + k as u64 - 1, 0.5);
        let t = build_count_table(&x, k, n).unwrap();
        let mut naive: HashMap<u64, u32> = HashMap::new();
        for j in 0..n {
            *naive.entry(x.window(j, k)).or_default() += 1;
        }
        prop_assert_eq!(t.distinct(), naive.len());
        for (v, c) in t.entries() {
            prop_assert_eq!(naive[&v], c);
        }
    }

    #[test]
    fn weight_filter_keeps_exactly_one_class(seed in any::<u64>(), k in 2u32..=30, w in 0u32..=30) {
        let w = w.min(k);
        let n = 2000;
        let x = sample_sequence(&RngStream::new(seed, 1), n + k as u64 - 1, 0.5);
        let full = build_count_table(&x, k, n).unwrap();
        let opts = CountOptions { threads: 1, weight_filter: Some(w) };
        let part = build_count_table_with(&x, k, n, &opts).unwrap();
        let expect: Vec<(u64, u32)> = full.entries().filter(|(v, _)| v.count_ones() == w).collect();
        prop_assert_eq!(part.entries().collect::<Vec<_>>(), expect);
    }

    #[test]
    fn bit_sequence_round_trip(bits in prop::collection::vec(any::<bool>(), 0..300)) {
        let x = BitSequence::from_bits(bits.iter().copied());
        let mut buf = Vec::new();
        x.write_to(&mut buf).unwrap();
        prop_assert_eq!(BitSequence::read_from(&buf[..]).unwrap(), x);
    }
}

#[test]
fn fast_and_honest_simulations_agree() {
    let rng = RngStream::new(5, 0);
    let fast = simulate_nonintersecting(&rng, 4, 32, 0.6, 100_000, SimMode::Fast).unwrap();
    let honest = simulate_nonintersecting(&rng, 4, 32, 0.6, 100_000, SimMode::Honest).unwrap();
    let a = CountDistribution::from_samples(&fast, 32).unwrap();
    let b = CountDistribution::from_samples(&honest, 32).unwrap();
    let tv = tv_distance(&a, &b).unwrap();
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn sampled_words_pass_chi_square() {
    let p = 0.6;
    let mut cursor = RngStream::new(99, 0).cursor(0);
    let trials = 100_000;
    let mut hist = [0u64; 8];
    for _ in 0..trials {
        hist[sample_word(&mut cursor, 3, p).unwrap().value() as usize] += 1;
    }
    let chi2: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &o)| {
            let w = bernpoisson::Word::new(v as u64, 3).unwrap();
            let e = trials as f64 * word_log_prob(&w, p).unwrap().exp2();
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // 0.999 quantile of chi-square with 7 degrees of freedom
    assert!(chi2 < 24.32, "chi2 {chi2}");
}

#[test]
fn conditional_mean_matches_simulation() {
    let (k, m, p, n_tilde) = (8, 5, 0.6, 100);
    let expect = conditional_mean_fixed_weight(k, m, p, n_tilde).unwrap();
    assert!((expect - 100.0 * 0.6f64.powi(5) * 0.4f64.powi(3)).abs() < 1e-12);
    let trials = 100_000;
    let s = simulate_nonintersecting_with(
        &RngStream::new(8, 0),
        k,
        n_tilde,
        p,
        trials,
        SimMode::Honest,
        WordLaw::FixedWeight(m),
    )
    .unwrap();
    let mean = s.iter().sum::<u64>() as f64 / trials as f64;
    let se = (expect / trials as f64).sqrt();
    assert!((mean - expect).abs() < 5.0 * se, "mean {mean} expected {expect}");
}

#[test]
fn poisson_reference_is_normalized() {
    for lambda in [0.01, 1.0, 7.5, 40.0] {
        let d = poisson_distribution(lambda, 20).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }
}
