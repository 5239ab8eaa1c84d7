use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdcast::nbseq::{fit, fit_binner, nearest_rank, train_nb, tune_rows, NbModel, NbTuneOptions, QuartileBinner};

fn random_rows(n: usize, f: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
    let labels = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    (rows, labels)
}

fn one_feature(binned: &[u8], labels: &[bool], alpha: f64) -> NbModel {
    let binner = QuartileBinner {
        edges: vec![[0.5, 1.5, 2.5]],
    };
    let rows: Vec<Vec<u8>> = binned.iter().map(|&q| vec![q]).collect();
    train_nb(binner, &rows, labels, alpha).unwrap()
}

#[test]
fn edges_and_clamping() {
    let rows: Vec<[f64; 1]> = (1..=8).map(|v| [v as f64]).collect();
    let b = fit_binner(&rows).unwrap();
    assert_eq!(b.edges[0], [2.0, 4.0, 6.0]);
    assert_eq!(b.bin(0, 5.0), 2);
    assert_eq!(b.bin(0, 1e9), 3);
    assert_eq!(b.bin(0, -1e9), 0);
    assert_eq!(b.bin(0, 2.0), 0);

    let flat: Vec<[f64; 2]> = (0..9).map(|v| [3.0, v as f64]).collect();
    let b = fit_binner(&flat).unwrap();
    assert_eq!(b.degenerate_features(), vec![0]);
    assert_eq!(b.bin(0, 3.0), 0);
    assert_eq!(b.bin(0, 3.5), 3);
    assert!(b.bin_row(&[1.0]).is_err());
}

#[test]
fn posterior_matches_hand_counts() {
    // positives: three in bin 0, one in bin 1; negatives: one per bin
    let bins = [0, 0, 0, 1, 0, 1, 2, 3];
    let labels = [true, true, true, true, false, false, false, false];
    let m = one_feature(&bins, &labels, 1.0);
    // P(q0|1) = 4/8, P(q0|0) = 2/8, prior 1/2 -> 2/3
    assert!((m.posterior_binned(&[0]) - 2.0 / 3.0).abs() < 1e-12);
    // P(q1|1) = 2/8, P(q1|0) = 2/8 -> prior
    assert!((m.posterior_binned(&[1]) - 0.5).abs() < 1e-12);
    for t in &m.tables {
        for row in t {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn strong_evidence_and_symmetry() {
    // bin 0 seen 9 times among positives and once among negatives
    let mut bins = vec![0; 9];
    bins.extend([1; 9]);
    bins.push(1);
    bins.push(0);
    let mut labels = vec![true; 9];
    labels.extend([false; 9]);
    labels.push(true);
    labels.push(false);
    let m = one_feature(&bins, &labels, 1e-9);
    assert!((m.posterior_binned(&[0]) - 0.9).abs() < 1e-6);

    let sym = one_feature(&[0, 1, 2, 3, 0, 1, 2, 3], &[true, true, true, true, false, false, false, false], 1.0);
    for q in 0..4 {
        assert!((sym.posterior_binned(&[q]) - 0.5).abs() < 1e-12);
    }
    assert!(sym.top_features(1)[0].1.abs() < 1e-12);
}

#[test]
fn heavy_padding_returns_the_prior() {
    let bins = [0, 0, 0, 3, 1, 2];
    let labels = [true, true, false, false, false, false];
    let m = one_feature(&bins, &labels, 1e12);
    for q in 0..4 {
        assert!((m.posterior_binned(&[q]) - 1.0 / 3.0).abs() < 1e-9);
    }
}

#[test]
fn informative_feature_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..400 {
        let t = rng.gen_bool(0.5);
        let signal = if t { rng.gen_range(5.0..10.0) } else { rng.gen_range(0.0..5.0) };
        rows.push(vec![rng.gen_range(0.0..1.0), signal, rng.gen_range(0.0..1.0)]);
        labels.push(t);
    }
    let m = fit(&rows, &labels, 1.0).unwrap();
    assert_eq!(m.top_features(3)[0].0, 1);
    let periods: Vec<usize> = (0..rows.len()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let opts = NbTuneOptions {
        alphas: vec![0.5, 1.0, 2.0],
        ..NbTuneOptions::default()
    };
    let t = tune_rows(&refs, &labels, &periods, &opts).unwrap();
    // the median edge sits near, not exactly at, the class boundary
    assert!(t.pstar.cv_bac > 0.9, "{t:?}");
    assert!(opts.alphas.contains(&t.alpha));
}

#[test]
fn round_trip_is_byte_identical() {
    let (rows, labels) = random_rows(200, 6, 3);
    let mut m = fit(&rows, &labels, 0.7).unwrap();
    m.pstar = 0.13;
    m.schema_fingerprint = "abc".into();
    let mut a = Vec::new();
    m.write(&mut a).unwrap();
    let back = NbModel::read(a.as_slice()).unwrap();
    assert_eq!(back, m);
    let mut b = Vec::new();
    back.write(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_time_is_linear() {
    let (small, small_y) = random_rows(20_000, 40, 1);
    let (large, large_y) = random_rows(40_000, 40, 2);
    let time = |rows: &[Vec<f64>], y: &[bool]| {
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let t = Instant::now();
            fit(rows, y, 1.0).unwrap();
            best = best.min(t.elapsed().as_secs_f64());
        }
        best
    };
    let ratio = time(&large, &large_y) / time(&small, &small_y);
    // sorting for quartiles adds a log factor; allow it
    assert!((1.6..=2.6).contains(&ratio), "ratio {ratio}");
}

fn brute_force(binned: &[Vec<u8>], labels: &[bool], alpha: f64, j: usize, t: bool, q: u8) -> f64 {
    let class = labels.iter().filter(|&&y| y == t).count() as f64;
    let hits = binned.iter().zip(labels).filter(|(r, &y)| y == t && r[j] == q).count() as f64;
    (hits + alpha) / (class + 4.0 * alpha)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tables_match_brute_force(seed in any::<u64>(), alpha in 0.1f64..3.0) {
        let (rows, labels) = random_rows(60, 3, seed);
        let m = fit(&rows, &labels, alpha).unwrap();
        let binned: Vec<Vec<u8>> = rows.iter().map(|r| m.binner.bin_row(r).unwrap()).collect();
        for j in 0..3 {
            for t in [false, true] {
                for q in 0..4u8 {
                    let expect = brute_force(&binned, &labels, alpha, j, t, q);
                    prop_assert!((m.tables[j][t as usize][q as usize] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>()) {
        let (rows, labels) = random_rows(50, 4, seed);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.reverse();
        idx.rotate_left((seed % 50) as usize);
        let rows2: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let labels2: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(fit(&rows, &labels, 1.0).unwrap(), fit(&rows2, &labels2, 1.0).unwrap());
    }

    #[test]
    fn uninformative_feature_leaves_posteriors_unchanged(seed in any::<u64>()) {
        // a feature distributed identically in both classes: two copies of
        // each row, one per bin of the extra feature within every class
        let (rows, labels) = random_rows(40, 3, seed);
        prop_assume!(labels.iter().any(|&t| t) && labels.iter().any(|&t| !t));
        let base = fit(&rows, &labels, 1.0).unwrap();
        let binned: Vec<Vec<u8>> = rows.iter().map(|r| base.binner.bin_row(r).unwrap()).collect();
        let mut wide = Vec::new();
        let mut wide_labels = Vec::new();
        for (r, &t) in binned.iter().zip(&labels) {
            for q in 0..4u8 {
                let mut row = r.clone();
                row.push(q);
                wide.push(row);
                wide_labels.push(t);
            }
        }
        let mut edges = base.binner.edges.clone();
        edges.push([0.5, 1.5, 2.5]);
        let with = train_nb(QuartileBinner { edges }, &wide, &wide_labels, 1.0).unwrap();
        let narrow: Vec<Vec<u8>> = binned.iter().flat_map(|r| std::iter::repeat_n(r.clone(), 4)).collect();
        let without = train_nb(base.binner.clone(), &narrow, &wide_labels, 1.0).unwrap();
        for r in &binned {
            for q in 0..4u8 {
                let mut row = r.clone();
                row.push(q);
                prop_assert!((with.posterior_binned(&row) - without.posterior_binned(r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearest_rank_is_an_order_statistic(mut v in prop::collection::vec(-100.0f64..100.0, 1..50), p in 0.01f64..1.0) {
        v.sort_by(f64::total_cmp);
        let x = nearest_rank(&v, p);
        let below = v.iter().filter(|&&y| y <= x).count() as f64;
        prop_assert!(below >= p * v.len() as f64 - 1e-9);
        prop_assert!(v.iter().filter(|&&y| y < x).count() < (p * v.len() as f64).ceil() as usize);
    }
}
