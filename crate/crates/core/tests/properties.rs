mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use romix::aggregation::{accessible_region, combine, exact_weights, weights_from_scores};
use romix::dataset::{Grid, SnapshotSet, SplitIndices};
use romix::forest::{Forest, ForestConfig};
use romix::latentmap::{GprModel, RbfModel};
use romix::neuralnet::softplus;
use romix::reduction::PodBasis;

use common::mean;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

/// `rows × cols` matrix with entries in `[-1, 1]`.
fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(|(n, m)| {
        prop::collection::vec(-1.0f64..1.0, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
    })
}

/// Distinct points in `[0, 1]^p`, at least `gap` apart.
fn distinct_points(p: usize, n: std::ops::RangeInclusive<usize>, gap: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, p), n).prop_filter("points too close", move |pts| {
        pts.iter().enumerate().all(|(i, a)| {
            pts[..i].iter().all(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() > gap)
        })
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn split_is_a_partition(n_train in 0usize..40, n_eval in 0usize..20, n_test in 0usize..20, seed in any::<u64>()) {
        let n = n_train + n_eval + n_test;
        let s = SplitIndices::random(n, n_train, n_eval, n_test, seed).unwrap();
        prop_assert_eq!((s.train.len(), s.eval.len(), s.test.len()), (n_train, n_eval, n_test));
        let mut all: Vec<usize> = s.train.iter().chain(&s.eval).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_round_trips_and_ignores_held_out_values(
        fields in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 6), 4..10),
        bump in -1e3f64..1e3,
    ) {
        let n = fields.len();
        let params: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let set = SnapshotSet::new(params.clone(), Grid::uniform_1d(6), fields.clone()).unwrap();
        let train: Vec<usize> = (0..n - 2).collect();
        let norm = set.normalize(&train).unwrap();
        let back = norm.denormalize();
        for (a, b) in back.fields.iter().flatten().zip(fields.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        // changing held-out snapshots leaves the statistics untouched
        let mut other = fields.clone();
        for v in other[n - 1].iter_mut() {
            *v += bump;
        }
        let set2 = SnapshotSet::new(params, Grid::uniform_1d(6), other).unwrap();
        prop_assert_eq!(set2.normalize(&train).unwrap().norm, norm.norm);
    }

    #[test]
    fn softplus_is_positive_and_finite(z in -700.0f64..700.0) {
        let s = softplus(z);
        prop_assert!(s > 0.0 && s.is_finite());
    }

    #[test]
    fn pod_is_orthonormal_and_error_nonincreasing(s in matrix(8..=30, 2..=8)) {
        let full = s.nrows().min(s.ncols());
        let mut prev = f64::INFINITY;
        for r in 1..=full {
            let basis = PodBasis::fit(&s, r).unwrap();
            let phi = basis.modes();
            prop_assert!((phi.transpose() * phi - DMatrix::identity(r, r)).abs().max() < 1e-10);
            let err = (&s - phi * (phi.transpose() * &s)).norm() / s.norm();
            prop_assert!(err <= prev + 1e-14);
            prev = err;
        }
        prop_assert!(prev < 1e-10);
    }

    #[test]
    fn rbf_interpolates_and_keeps_constants(
        centers in distinct_points(2, 3..=15, 1e-3),
        c in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<Vec<f64>> = centers.iter().map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let model = RbfModel::fit(&centers, &targets).unwrap();
        for (x, t) in centers.iter().zip(&targets) {
            for (a, b) in model.predict(x).unwrap().iter().zip(t) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
        let flat = RbfModel::fit(&centers, &vec![vec![c]; centers.len()]).unwrap();
        prop_assert_eq!(flat.predict(&[0.37, 0.81]).unwrap(), vec![c]);
    }

    #[test]
    fn gpr_mean_is_linear_in_targets(
        inputs in distinct_points(1, 3..=10, 1e-2),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        q in 0.0f64..1.0,
    ) {
        let y1: Vec<Vec<f64>> = inputs.iter().map(|x| vec![(4.0 * x[0]).sin()]).collect();
        let y2: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0] * x[0]]).collect();
        let mix: Vec<Vec<f64>> = y1.iter().zip(&y2).map(|(u, v)| vec![a * u[0] + b * v[0]]).collect();
        let fit = |y: &[Vec<f64>]| GprModel::fit_fixed(&inputs, y, 1.0, 0.05, 1e-8).unwrap().predict(&[q]).unwrap()[0];
        let lhs = fit(&mix);
        let rhs = a * fit(&y1) + b * fit(&y2);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()));
    }

    #[test]
    fn forest_predictions_stay_in_target_range(
        rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -5.0f64..5.0), 5..60),
        queries in prop::collection::vec((-1.0f64..2.0, -1.0f64..2.0), 1..20),
        seed in any::<u64>(),
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let cfg = ForestConfig { n_trees: 10, seed, ..ForestConfig::default() };
        let f = Forest::fit(&x, &y, &cfg).unwrap();
        for q in &queries {
            let p = f.predict(&[q.0, q.1]).unwrap();
            prop_assert!(lo <= p && p <= hi);
        }
        prop_assert_eq!(Forest::fit(&x, &y, &cfg).unwrap(), f);
    }

    #[test]
    fn weight_rows_form_a_partition_of_unity(
        scores in (1usize..20, 2usize..6).prop_flat_map(|(n, m)| {
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, 1e-320f64..1e-300], n * m)
                .prop_map(move |v| DMatrix::from_vec(n, m, v))
        }),
    ) {
        let (w, _) = weights_from_scores(&scores).unwrap();
        for row in w.row_iter() {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mixture_stays_in_the_accessible_region(
        preds in (1usize..30, 2usize..5).prop_flat_map(|(n, m)| {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), m)
        }),
        sigma in 1e-3f64..1.0,
        shift in -1.0f64..1.0,
    ) {
        let truth: Vec<f64> = preds[0].iter().map(|v| v + shift).collect();
        let w = exact_weights(&preds, &truth, sigma).unwrap();
        let mix = combine(&preds, &w).unwrap();
        let (lo, hi) = accessible_region(&preds).unwrap();
        for i in 0..truth.len() {
            prop_assert!(lo[i] <= mix[i] && mix[i] <= hi[i]);
            let worst = preds.iter().map(|p| (p[i] - truth[i]).abs()).fold(0.0, f64::max);
            prop_assert!((mix[i] - truth[i]).abs() <= worst);
        }
        let wide = exact_weights(&preds, &truth, 1e6).unwrap();
        prop_assert!(wide.iter().all(|v| (v - 1.0 / preds.len() as f64).abs() < 1e-6));
    }
}

#[test]
fn oob_error_running_mean_decreases_with_more_trees() {
    use rand::{Rng, SeedableRng};
    let smooth = |a: f64, b: f64| (3.0 * a).sin() * (2.0 * b).cos() + a * b;
    let mut curves = Vec::new();
    for seed in 0..5u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..150).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let y: Vec<f64> = x.iter().map(|r| smooth(r[0], r[1])).collect();
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 100, seed, ..ForestConfig::default() }).unwrap();
        curves.push(f.oob_mse_curve(&x, &y).unwrap());
    }
    let at = |k: usize| mean(&curves.iter().map(|c| c[k - 1]).collect::<Vec<_>>());
    let (m1, m10, m100) = (at(1), at(10), at(100));
    assert!(m1 >= m10 && m10 >= m100, "{m1} {m10} {m100}");
}
