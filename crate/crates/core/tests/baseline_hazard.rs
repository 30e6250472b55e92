mod common;

use hazdiff::baseline::{breslow, nelson_aalen, weighted_breslow, BalanceWeights};
use hazdiff::{RiskSetIndex, SurvivalDataset};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Exp};

fn probe_times(d: &SurvivalDataset) -> Vec<f64> {
    let mut t: Vec<f64> = d.times().to_vec();
    t.extend(d.times().iter().map(|x| x * 0.97));
    t.extend([0.0, 1e-3, d.tau() * 1.01]);
    t
}

#[test]
fn uncensored_unit_steps_are_nelson_aalen() {
    let d = SurvivalDataset::new(vec![1.0, 2.0, 3.0], vec![true; 3], vec![true, false, false], DMatrix::zeros(3, 1), None).unwrap();
    let idx = RiskSetIndex::new(&d);
    let b = breslow(&d, &idx, &[0.0]);
    assert_eq!(b.eval(0.99, 0.0), 0.0);
    assert!((b.eval(1.0, 0.0) - 1.0 / 3.0).abs() < 1e-15);
    assert!((b.eval(2.0, 0.0) - 5.0 / 6.0).abs() < 1e-15);
    assert!((b.eval(3.0, 0.0) - 11.0 / 6.0).abs() < 1e-15);
}

#[test]
fn four_subject_instance_matches_term_by_term_sum() {
    let d = SurvivalDataset::new(
        vec![0.4, 1.1, 1.1, 2.5],
        vec![true, true, false, true],
        vec![false, true, true, false],
        DMatrix::from_column_slice(4, 1, &[0.3, -0.6, 1.2, 0.1]),
        None,
    )
    .unwrap();
    let idx = RiskSetIndex::new(&d);
    let b = breslow(&d, &idx, &[0.5]);
    for t in [0.1, 0.4, 0.7, 1.1, 1.5, 2.5, 3.0] {
        let want = common::brute_breslow(&d, &[0.5], 0.2, t);
        assert!((b.eval(t, 0.2) - want).abs() < 1e-14, "t = {t}");
    }
}

#[test]
fn equal_propensities_give_treated_only_nelson_aalen() {
    let d = common::random_dataset(17, 40, 2, true);
    let idx = RiskSetIndex::new(&d);
    let w = BalanceWeights::from_propensities(d.treatments(), &vec![0.5; d.n()]);
    let treated: Vec<usize> = (0..d.n()).filter(|&i| d.treatments()[i]).collect();
    let sub = d.subset(&treated);
    let na = nelson_aalen(&RiskSetIndex::new(&sub));
    let est = weighted_breslow(&d, &idx, &[0.0, 0.0], &w, 1, false).unwrap();
    for t in probe_times(&d) {
        assert!((est.eval(t, 0.0) - na.eval(t)).abs() < 1e-13, "t = {t}");
    }
}

#[test]
fn treated_and_control_arms_use_their_own_subjects() {
    let d = common::random_dataset(18, 40, 2, false);
    let ps = common::propensity(&d, &[0.1, 0.4, -0.3]);
    let w = BalanceWeights::from_propensities(d.treatments(), &ps);
    for i in 0..d.n() {
        let (w0, w1) = (w.w0[i], w.w1[i]);
        if d.treatments()[i] {
            assert!(w0 == 0.0 && (w1 - (1.0 - ps[i])).abs() < 1e-15);
        } else {
            assert!(w1 == 0.0 && (w0 - ps[i]).abs() < 1e-15);
        }
    }
    let g = BalanceWeights::from_gamma(&d, &[0.1, 0.4, -0.3]);
    assert_eq!(g, w);
}

/// Weighted estimators with constant weights within an arm reduce to the
/// ordinary estimator on that arm alone.
#[test]
fn constant_arm_weights_reduce_to_arm_breslow() {
    for seed in 0..10 {
        let d = common::random_dataset(40 + seed, 30, 3, seed % 2 == 1);
        let idx = RiskSetIndex::new(&d);
        let beta = common::normal_vec(seed, 3, 0.3);
        let w = BalanceWeights::from_propensities(d.treatments(), &vec![0.3; d.n()]);
        for arm in [0u8, 1] {
            let rows: Vec<usize> = (0..d.n()).filter(|&i| d.treatments()[i] == (arm == 1)).collect();
            let sub = d.subset(&rows);
            let plain = breslow(&sub, &RiskSetIndex::new(&sub), &beta);
            let weighted = weighted_breslow(&d, &idx, &beta, &w, arm, true).unwrap();
            for t in probe_times(&d) {
                for theta in [-0.4, 0.0, 0.9] {
                    let (a, b) = (weighted.eval(t, theta), plain.eval(t, theta));
                    assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "seed {seed} arm {arm} t {t}: {a} vs {b}");
                }
            }
        }
    }
}

/// Direct evaluation of the θ-profiled control-arm estimator, by loops.
fn brute_weighted(d: &SurvivalDataset, beta: &[f64], w: &[f64], theta: f64, t: f64) -> f64 {
    let mut total = 0.0;
    for (a, b) in common::segments(d) {
        if a >= t {
            break;
        }
        let set = common::risk_set(d, 0.5 * (a + b));
        let den: f64 = set.iter().map(|&j| w[j]).sum();
        if den <= 0.0 {
            continue;
        }
        let dens: f64 = set.iter().map(|&j| w[j] * (common::dot_row(d, j, beta) + theta * common::dv(d, j))).sum::<f64>() / den;
        total -= dens * (b.min(t) - a);
        if b <= t {
            let at_b: f64 = common::risk_set(d, b).iter().map(|&j| w[j]).sum();
            let ev: f64 = (0..d.n()).filter(|&j| d.events()[j] && d.time(j) == b).map(|j| w[j]).sum();
            total += ev / at_b;
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_decomposition_matches_direct_evaluation(
        seed in any::<u64>(), n in 3usize..25, p in 1usize..4, ties in any::<bool>(), theta in -1.0f64..1.0,
    ) {
        let d = common::random_dataset(seed, n, p, ties);
        let idx = RiskSetIndex::new(&d);
        let beta = common::normal_vec(seed ^ 1, p, 0.5);
        let b = breslow(&d, &idx, &beta);
        for t in probe_times(&d) {
            let want = common::brute_breslow(&d, &beta, theta, t);
            prop_assert!((b.eval(t, theta) - want).abs() <= 1e-12 * (1.0 + want.abs()));
            let (_, bb) = b.components(t);
            let diff = b.eval(t, theta) - b.eval(t, theta + 0.37);
            prop_assert!((diff - 0.37 * bb).abs() <= 1e-12 * (1.0 + bb.abs()));
        }
        prop_assert!(b.total_variation(theta).is_finite());
        let gamma = common::normal_vec(seed ^ 2, p + 1, 0.5);
        let w = BalanceWeights::from_gamma(&d, &gamma);
        let wb = weighted_breslow(&d, &idx, &beta, &w, 0, true).unwrap();
        for t in probe_times(&d) {
            let want = brute_weighted(&d, &beta, &w.w0, theta, t);
            prop_assert!((wb.eval(t, theta) - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn breslow_is_self_consistent(seed in any::<u64>(), n in 2usize..40, ties in any::<bool>(), theta in -1.0f64..1.0) {
        let d = common::random_dataset(seed, n, 2, ties);
        let idx = RiskSetIndex::new(&d);
        let beta = common::normal_vec(seed ^ 3, 2, 0.5);
        let b = breslow(&d, &idx, &beta);
        for (g, &u) in idx.distinct_times().iter().enumerate() {
            let set = common::risk_set(&d, u);
            let events = (0..d.n()).filter(|&i| d.events()[i] && d.time(i) == u).count() as f64;
            // jump part: dN balanced by Y dΛ̂
            let r1 = events - set.len() as f64 * b.jumps()[g];
            // drift part: Y(β'Z + θD) dt + Y dΛ̂ = 0 on the preceding segment
            let drift = b.drift_a()[g] - theta * b.drift_b()[g];
            let r2: f64 = set.iter().map(|&j| common::dot_row(&d, j, &beta) + theta * common::dv(&d, j) + drift).sum();
            prop_assert!(r1.abs() <= 1e-12 * (1.0 + events));
            prop_assert!(r2.abs() <= 1e-12 * set.len() as f64);
        }
    }
}

/// One draw with constant baseline 0.25, effect −0.25 and hazards
/// `0.25 − 0.25 D + 0.2 Z_1 + 0.1 Z_2`, `Z ~ U(0, 1)²`.
fn consistency_draw(seed: u64, n: usize) -> (SurvivalDataset, Vec<f64>) {
    let mut r = common::rng(seed);
    let z = DMatrix::from_fn(n, 2, |_, _| r.random::<f64>());
    let ps: Vec<f64> = (0..n).map(|i| common::expit(-0.3 + 0.8 * z[(i, 0)])).collect();
    let d: Vec<bool> = ps.iter().map(|&p| r.random::<f64>() < p).collect();
    let tau = 3.0;
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let rate = 0.25 - 0.25 * f64::from(u8::from(d[i])) + 0.2 * z[(i, 0)] + 0.1 * z[(i, 1)];
        let t: f64 = Exp::new(rate).unwrap().sample(&mut r);
        let c: f64 = r.random::<f64>() * 2.0 * tau;
        times.push(t.min(c));
        events.push(t <= c);
    }
    (SurvivalDataset::new(times, events, d, z, Some(tau)).unwrap(), ps)
}

#[test]
fn arm_difference_tracks_the_effect() {
    let reps = 20;
    let mut means = Vec::new();
    for rep in 0..reps {
        let (d, ps) = consistency_draw(500 + rep, 2000);
        let idx = RiskSetIndex::new(&d);
        let w = BalanceWeights::from_propensities(d.treatments(), &ps);
        let l1 = weighted_breslow(&d, &idx, &[0.2, 0.1], &w, 1, false).unwrap();
        let l0 = weighted_breslow(&d, &idx, &[0.2, 0.1], &w, 0, false).unwrap();
        let grid: Vec<f64> = (1..=150).map(|k| 1.5 * k as f64 / 150.0).collect();
        let m = grid.iter().map(|&t| l1.eval(t, 0.0) - l0.eval(t, 0.0) + 0.25 * t).sum::<f64>() / grid.len() as f64;
        means.push(m);
    }
    let (m, sd) = common::mean_sd(&means);
    let se = sd / (reps as f64).sqrt();
    assert!(m.abs() < 3.0 * se + 1e-3, "mean {m}, se {se}");
    // spread small enough that an effect off by 0.05 would fail
    assert!(sd < 0.05);
}
