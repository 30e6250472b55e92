mod common;

use hazdiff::{read_csv, Error, RiskSetIndex, StepFunction, SurvivalDataset};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn missing_tau_uses_largest_time_and_column_count() {
    let text = "time,status,treatment,z1,z2\n1.5,1,0,0.1,2\n0.5,0,1,-0.3,1\n";
    let d = read_csv(text.as_bytes(), None).unwrap();
    assert_eq!((d.n(), d.p(), d.tau()), (2, 2, 1.5));
    assert_eq!(d.covariates()[(1, 1)], 1.0);
}

#[test]
fn header_must_name_columns_exactly() {
    for bad in ["t,status,treatment,z1\n1,1,0,0\n", "time,status,treatment\n1,1,0\n", "time,status,treatment,x1\n1,1,0,0\n"] {
        assert!(matches!(read_csv(bad.as_bytes(), None), Err(Error::MalformedHeader(_))), "{bad}");
    }
}

#[test]
fn nonfinite_values_and_empty_bodies_are_rejected() {
    let nan = "time,status,treatment,z1\n1,1,0,NaN\n2,0,1,0\n";
    assert!(matches!(read_csv(nan.as_bytes(), None), Err(Error::NonFiniteValue { .. })));
    let empty = "time,status,treatment,z1\n";
    assert_eq!(read_csv(empty.as_bytes(), None).unwrap_err(), Error::EmptyDataset);
    let bad_d = "time,status,treatment,z1\n1,1,3,0\n2,0,1,0\n";
    assert!(matches!(read_csv(bad_d.as_bytes(), None), Err(Error::NonBinaryColumn { .. })));
}

#[test]
fn write_then_read_round_trips() {
    let d = common::random_dataset(3, 12, 3, true);
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let back = read_csv(buf.as_slice(), Some(d.tau())).unwrap();
    assert_eq!(back.times(), d.times());
    assert_eq!(back.events(), d.events());
    assert_eq!(back.treatments(), d.treatments());
    assert_eq!(back.covariates(), d.covariates());
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "time,status,treatment,z1\n1.0,1,1,0.1\n2.0,0,0,-0.2\n0.5,1,1,0.3\n").unwrap();
    let d = hazdiff::load_csv(&path, Some(1.5)).unwrap();
    assert_eq!(d.times(), &[1.0, 1.5, 0.5]);
    assert_eq!(d.events(), &[true, false, true]);
    assert!(matches!(hazdiff::load_csv(dir.path().join("none.csv"), None), Err(Error::Io(_))));
}

#[test]
fn tie_convention_events_before_censorings() {
    let idx = RiskSetIndex::from_times(&[2.0, 2.0, 1.0, 2.0], &[false, true, true, true]);
    assert_eq!(idx.distinct_times(), &[1.0, 2.0]);
    assert_eq!(idx.at_risk_counts(), &[4, 3]);
    assert_eq!(idx.event_counts(), &[1, 2]);
    // within the tied group the censored subject comes last
    assert_eq!(*idx.group(1).last().unwrap(), 0);
}

#[test]
fn step_function_rejects_unsorted_knots() {
    assert!(StepFunction::new(vec![1.0, 1.0], vec![0.0, 1.0]).is_err());
    assert!(StepFunction::from_increments(&[2.0, 1.0], &[1.0, 1.0]).is_err());
    let f = StepFunction::from_increments(&[1.0, 1.0, 3.0], &[0.5, 0.25, -1.0]).unwrap();
    assert_eq!(f.knots(), &[1.0, 3.0]);
    assert_eq!(f.eval(0.999), 0.0);
    assert_eq!(f.eval(1.0), 0.75);
    assert_eq!(f.eval(5.0), -0.25);
    assert_eq!(f.total_variation(), 1.75);
}

fn dataset_strategy() -> impl Strategy<Value = SurvivalDataset> {
    (any::<u64>(), 2usize..=50, 1usize..=4, any::<bool>())
        .prop_map(|(seed, n, p, ties)| common::random_dataset(seed, n, p, ties))
}

proptest! {
    #[test]
    fn risk_counts_match_direct_counting(d in dataset_strategy()) {
        let idx = RiskSetIndex::new(&d);
        let mut probes: Vec<f64> = d.times().to_vec();
        probes.extend(d.times().iter().map(|t| t - 1e-7));
        probes.extend(d.times().iter().map(|t| t + 1e-7));
        probes.extend([0.0, d.tau() * 2.0]);
        for t in probes {
            let direct = (0..d.n()).filter(|&i| d.time(i) >= t).count();
            prop_assert_eq!(idx.at_risk_at(t), direct);
        }
        for w in idx.at_risk_counts().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        for (g, &u) in idx.distinct_times().iter().enumerate() {
            let mut rs: Vec<usize> = idx.risk_set(g).to_vec();
            rs.sort_unstable();
            prop_assert_eq!(rs, common::risk_set(&d, u));
        }
    }

    #[test]
    fn counting_process_ends_at_event_flag(d in dataset_strategy()) {
        for i in 0..d.n() {
            prop_assert_eq!(d.counting(i, d.tau()), d.event(i));
            prop_assert_eq!(d.at_risk(i, d.time(i)), 1.0);
        }
        let idx = RiskSetIndex::new(&d);
        let events: usize = idx.event_counts().iter().sum();
        prop_assert_eq!(events, d.events().iter().filter(|&&e| e).count());
    }

    #[test]
    fn step_integral_is_riemann_stieltjes_sum(
        incs in proptest::collection::vec((0.0f64..10.0, -2.0f64..2.0), 1..30),
        cuts in proptest::collection::vec((0.0f64..10.0, -3.0f64..3.0), 1..10),
    ) {
        let mut sorted = incs.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let knots: Vec<f64> = sorted.iter().map(|x| x.0).collect();
        let inc: Vec<f64> = sorted.iter().map(|x| x.1).collect();
        let f = StepFunction::from_increments(&knots, &inc).unwrap();
        // a bounded right-continuous step integrand
        let g = |t: f64| cuts.iter().filter(|c| c.0 <= t).map(|c| c.1).sum::<f64>();
        let brute: f64 = sorted.iter().map(|&(t, d)| g(t) * d).sum();
        let via = f.integrate(g);
        prop_assert!((brute - via).abs() <= 1e-12 * (1.0 + brute.abs()));
        let tv: f64 = f.increments().iter().map(|d| d.abs()).sum();
        prop_assert_eq!(f.total_variation(), tv);
    }

    #[test]
    fn truncation_at_tau_on_ingestion(seed in any::<u64>(), frac in 0.1f64..0.9) {
        let d = common::random_dataset(seed, 20, 2, false);
        let tau = d.tau() * frac;
        let t = SurvivalDataset::new(d.times().to_vec(), d.events().to_vec(), d.treatments().to_vec(), d.covariates().clone(), Some(tau)).unwrap();
        for i in 0..d.n() {
            if d.time(i) > tau {
                prop_assert_eq!(t.time(i), tau);
                prop_assert!(!t.events()[i]);
            } else {
                prop_assert_eq!(t.time(i), d.time(i));
                prop_assert_eq!(t.events()[i], d.events()[i]);
            }
        }
    }
}

#[test]
fn single_subject_is_rejected() {
    let r = SurvivalDataset::new(vec![1.0], vec![true], vec![true], DMatrix::zeros(1, 1), None);
    assert!(matches!(r, Err(Error::InvalidData(_))));
}
