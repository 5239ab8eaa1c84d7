mod common;

use chrono::Duration;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{calendar, cells_cube, random_records, EVENT, SOURCES};
use crowdcast::calendar::Calendar;
use crowdcast::cube::ingest;
use crowdcast::detrend::{normalize_daily, normalize_weekly, BaselineMean, NormalizedCube, WeeklyDenominator};
use crowdcast::labeler::{label_days, label_weeks, significance, threshold_from_quantile, TieWarning, DEFAULT_THETA};
use crowdcast::mention::SourceType;

fn mean_of(entities: &[String], m: f64) -> BaselineMean {
    BaselineMean {
        entities: entities.to_vec(),
        mean: vec![m; entities.len()],
        zero: vec![false; entities.len()],
    }
}

fn constant_norm(days: usize) -> (Vec<String>, NormalizedCube) {
    let cal = calendar(days as i64);
    let cells: Vec<_> = (0..days).map(|i| ("A", SourceType::Mainstream, i, 0, 10)).collect();
    let ents = vec!["A".to_string()];
    let norm = normalize_daily(&cells_cube(&cal, &cells), &ents, EVENT, &[SourceType::Mainstream], &[0], 3).unwrap();
    (ents, norm)
}

#[test]
fn ratio_of_one_is_not_significant() {
    let (ents, norm) = constant_norm(20);
    let s = significance(&norm, &mean_of(&ents, 1.0), 0, 0, DEFAULT_THETA).unwrap();
    for i in 4..19 {
        assert_eq!(s.get(0, i), Some(1.0));
        assert_eq!(s.is_significant(0, i), Some(false));
    }
    let labels = label_days(&s, 1).unwrap();
    assert!(labels.labels.values().all(|&t| !t));
}

#[test]
fn three_consecutive_threes_are_significant() {
    let (ents, norm) = constant_norm(20);
    let s = significance(&norm, &mean_of(&ents, 1.0 / 3.0), 0, 0, DEFAULT_THETA).unwrap();
    assert!((s.get(0, 10).unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(s.is_significant(0, 10), Some(true));
}

#[test]
fn boundary_value_is_significant() {
    // window 1 and a second entity at 16 mentions a day: A's lone 207
    // mentions give r = 2 * 207 / 16 = 25.875 between two zeros
    let cal = calendar(12);
    let mut cells: Vec<_> = (0..12).map(|i| ("B", SourceType::Mainstream, i, 0, 16)).collect();
    cells.push(("A", SourceType::Mainstream, 6, 0, 207));
    let ents = vec!["A".to_string(), "B".to_string()];
    let norm = normalize_daily(&cells_cube(&cal, &cells), &ents, EVENT, &[SourceType::Mainstream], &[0], 1).unwrap();
    let s = significance(&norm, &mean_of(&ents, 1.0), 0, 0, DEFAULT_THETA).unwrap();
    assert_eq!(s.get(0, 6), Some(8.625));
    // the window centered on day 5 averages 0, 0 and 25.875
    assert_eq!(s.get(0, 5), Some(DEFAULT_THETA * 3.0));
    let s = significance(&norm, &mean_of(&ents, 3.0), 0, 0, DEFAULT_THETA).unwrap();
    assert_eq!(s.get(0, 5), Some(DEFAULT_THETA));
    assert_eq!(s.is_significant(0, 5), Some(true));
    // T(c, i, 1) reads day i + 2
    let labels = label_days(&s, 1).unwrap();
    assert_eq!(labels.get(0, 3), Some(true));
    assert_eq!(labels.get(0, 2), Some(false));
}

fn random_series(seed: u64, theta: f64) -> crowdcast::labeler::SignificanceSeries {
    let cal = calendar(60);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = random_records(&mut rng, &cal, 3, 0, 0);
    let cube = ingest(records.iter(), &cal, &[EVENT, "strike"]).cube;
    let ents: Vec<String> = (0..3).map(|c| format!("K{c}")).collect();
    let norm = normalize_daily(&cube, &ents, EVENT, &SOURCES, &[0], 5).unwrap();
    // a small mean makes both classes common
    significance(&norm, &mean_of(&ents, 0.4), 0, 0, theta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn horizon_k_is_horizon_one_shifted(seed in any::<u64>(), k in 2usize..8) {
        let s = random_series(seed, DEFAULT_THETA);
        let one = label_days(&s, 1).unwrap();
        let many = label_days(&s, k).unwrap();
        for (&(e, i), &t) in &many.labels {
            prop_assert_eq!(one.get(e, i + k - 1), Some(t));
        }
        for (&(e, i), &t) in &one.labels {
            if i >= k - 1 {
                prop_assert_eq!(many.get(e, i - (k - 1)), Some(t));
            }
        }
    }

    #[test]
    fn raising_theta_never_adds_positives(seed in any::<u64>(), lo in 1.0f64..3.0, step in 0.0f64..2.0) {
        let a = label_days(&random_series(seed, lo), 1).unwrap();
        let b = label_days(&random_series(seed, lo + step), 1).unwrap();
        prop_assert_eq!(a.labels.len(), b.labels.len());
        for (key, &t) in &b.labels {
            prop_assert!(!t || a.labels[key]);
        }
    }

    #[test]
    fn shifting_the_calendar_shifts_significance(seed in any::<u64>(), d in 1i64..20) {
        let cal = calendar(50);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = random_records(&mut rng, &cal, 2, 0, 0);
        let shifted_cal = Calendar::new(
            cal.corpus_start - Duration::days(d),
            cal.corpus_end,
            cal.train_end,
            cal.test_start,
        )
        .unwrap();
        let ents = vec!["K0".to_string(), "K1".to_string()];
        let series = |c: &Calendar| {
            let cube = ingest(records.iter(), c, &[EVENT, "strike"]).cube;
            let norm = normalize_daily(&cube, &ents, EVENT, &SOURCES, &[0], 7).unwrap();
            significance(&norm, &mean_of(&ents, 1.0), 0, 0, DEFAULT_THETA).unwrap()
        };
        let (a, b) = (series(&cal), series(&shifted_cal));
        for e in 0..2 {
            for i in 0..50isize {
                if let Some(v) = a.get(e, i) {
                    prop_assert_eq!(b.get(e, i + d as isize), Some(v));
                }
            }
        }
    }

    #[test]
    fn quantile_threshold_is_the_best_admissible_cut(values in prop::collection::vec(0u8..12, 1..60), q in 0.05f64..0.5) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let t = threshold_from_quantile(&values, q).unwrap();
        let n = values.len() as f64;
        let frac = |v: f64| values.iter().filter(|&&x| x >= v).count() as f64 / n;
        // scan every candidate: the best fraction not above q
        let best = values
            .iter()
            .map(|&v| frac(v))
            .filter(|&f| f <= q)
            .fold(None, |acc: Option<f64>, f| Some(acc.map_or(f, |a| a.max(f))));
        match best {
            Some(b) => {
                prop_assert_eq!(t.positive_fraction, b);
                prop_assert_eq!(frac(t.theta), b);
                prop_assert!(t.positive_fraction <= q);
            }
            None => prop_assert_eq!(t.warning, Some(TieWarning::ExceedsQuantile)),
        }
    }
}

#[test]
fn quantile_of_one_to_twenty() {
    let values: Vec<f64> = (1..=20).map(f64::from).collect();
    let t = threshold_from_quantile(&values, 0.15).unwrap();
    assert_eq!(t.theta, 18.0);
    assert_eq!(t.positive_fraction, 0.15);
    assert_eq!(t.warning, None);
}

#[test]
fn all_equal_values_warn_and_label_everything() {
    let t = threshold_from_quantile(&[4.0; 30], 0.15).unwrap();
    assert_eq!(t.theta, 4.0);
    assert_eq!(t.positive_fraction, 1.0);
    assert_eq!(t.warning, Some(TieWarning::ExceedsQuantile));
}

fn weekly_norm(cells: &[(&str, SourceType, usize, i64, usize)], weeks: usize) -> NormalizedCube {
    let cal = calendar(7 * weeks as i64);
    let cube = cells_cube(&cal, cells).aggregate_weekly().unwrap();
    normalize_weekly(&cube, "A", &[EVENT.to_string()], &[SourceType::Blog], &[0, 1, 2], 2, WeeklyDenominator::PublishedVolume).unwrap()
}

#[test]
fn weekly_labels_compare_the_next_week_inclusively() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cells: Vec<_> = (0..7 * 20).map(|i| ("A", SourceType::Blog, i, 0, rng.gen_range(0..4))).collect();
    let norm = weekly_norm(&cells, 20);
    let defined: Vec<f64> = (0..norm.n_periods).filter_map(|w| norm.get(0, 0, 0, w, 0)).collect();
    let theta = defined[defined.len() / 2];
    for h in 1..3 {
        let labels = label_weeks(&norm, 0, 0, theta, h).unwrap();
        for w in 0..norm.n_periods {
            let direct = norm.get(0, 0, 0, w + h, 0).map(|v| v >= theta);
            assert_eq!(labels.get(0, w), direct);
        }
    }
    let exact = (0..norm.n_periods).find(|&w| norm.get(0, 0, 0, w + 1, 0) == Some(theta)).unwrap();
    assert_eq!(label_weeks(&norm, 0, 0, theta, 1).unwrap().get(0, exact), Some(true));
}

#[test]
fn silent_weeks_are_all_negative() {
    let cells = [("B", SourceType::Blog, 0, 0, 1)];
    let cal = calendar(70);
    let cube = cells_cube(&cal, &cells).aggregate_weekly().unwrap();
    let norm = normalize_weekly(&cube, "A", &[EVENT.to_string()], &[SourceType::Blog], &[0, 1], 2, WeeklyDenominator::PublishedVolume).unwrap();
    let labels = label_weeks(&norm, 0, 0, 0.5, 1).unwrap();
    assert!(!labels.labels.is_empty());
    assert!(labels.labels.values().all(|&t| !t));
}
