use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use compsel::composite::{critical_index, phi};
use compsel::function::{DesignMeasure, GridFunction, Lp, Modulus};
use compsel::gaussians::{hellinger_gaussian, ParamBounds};
use compsel::model::{kraft_sum, LinearModel};
use compsel::selector::{mix_streams, penalized_select, ModelStream, RegressionData};

fn design(n: usize) -> Arc<DesignMeasure> {
    let nodes = (0..n).map(|j| -1.0 + 2.0 * (j as f64 + 0.5) / n as f64).collect();
    Arc::new(DesignMeasure::empirical_flat(1, nodes).unwrap())
}

/// Nested polynomial spans of dimension 0..=top on `measure`, each with weight `delta_of(dim)`.
fn polynomial_models(measure: &Arc<DesignMeasure>, top: usize, delta_of: impl Fn(usize) -> f64) -> Vec<LinearModel> {
    (0..=top)
        .map(|dim| {
            let fs: Vec<GridFunction> =
                (0..dim).map(|d| GridFunction::from_fn(measure, |x| x[0].powi(d as i32)).unwrap()).collect();
            if dim == 0 {
                LinearModel::zero("poly0", measure.clone(), delta_of(0))
            } else {
                LinearModel::span(format!("poly{dim}"), &fs, delta_of(dim)).unwrap()
            }
        })
        .collect()
}

/// Concave nondecreasing table on [0, 2] with w(0) = 0.
fn concave_table() -> impl Strategy<Value = Modulus> {
    (prop::collection::vec(0.01f64..1.99, 1..6), prop::collection::vec(0.0f64..3.0, 6)).prop_filter_map(
        "knots too close",
        |(mut inner, mut slopes)| {
            inner.sort_by(f64::total_cmp);
            inner.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let mut knots = vec![0.0];
            knots.extend(inner);
            knots.push(2.0);
            slopes.truncate(knots.len() - 1);
            slopes.sort_by(|a, b| b.total_cmp(a));
            let mut values = vec![0.0];
            for (j, s) in slopes.iter().enumerate() {
                values.push(values[j] + s * (knots[j + 1] - knots[j]));
            }
            Modulus::tabulated(knots, values).ok()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn phi_is_monotone_and_below_min(x in 0.01f64..5.0, y in 0.01f64..5.0, dx in 0.0f64..2.0, dy in 0.0f64..2.0) {
        let base = phi(x, y).unwrap();
        prop_assert!(phi(x + dx, y).unwrap() >= base - 1e-15);
        prop_assert!(phi(x, y + dy).unwrap() >= base - 1e-15);
        prop_assert!(base <= x.min(y) + 1e-15);
        prop_assert_eq!(base, phi(y, x).unwrap());
    }

    #[test]
    fn critical_index_is_minimal(lip in 0.1f64..5.0, expo in 0.2f64..1.0, l in 1usize..4, log_tau in -9.0f64..-1.0, dim in 1usize..30) {
        let w = Modulus::holder(lip, expo).unwrap();
        let tau = log_tau.exp();
        let i = critical_index(&w, l, tau, dim, 500).unwrap();
        let holds = |i: u32| {
            let v = w.eval((-(i as f64)).exp()).unwrap();
            l as f64 * v * v <= tau * i as f64 * dim as f64
        };
        prop_assert!(holds(i));
        prop_assert!(i == 1 || !holds(i - 1));
    }

    #[test]
    fn modulus_is_subadditive(w in concave_table(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let joint = w.eval(a + b).unwrap();
        prop_assert!(joint <= w.eval(a).unwrap() + w.eval(b).unwrap() + 1e-12);
    }

    #[test]
    fn lp_norms_increase_with_p(values in prop::collection::vec(-3.0f64..3.0, 2..60)) {
        let m = design(values.len());
        let f = GridFunction::new(m, values).unwrap();
        let (l1, l2, sup) = (f.lp_norm(Lp::L1), f.lp_norm(Lp::L2), f.lp_norm(Lp::Inf));
        prop_assert!(l1 <= l2 * (1.0 + 1e-12) + 1e-15);
        prop_assert!(l2 <= sup * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn clamping_never_increases_distance(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..60)) {
        let m = design(pairs.len());
        let f = GridFunction::new(m.clone(), pairs.iter().map(|p| p.0).collect()).unwrap();
        let g = GridFunction::new(m, pairs.iter().map(|p| p.1).collect()).unwrap();
        for p in [Lp::L1, Lp::L2, Lp::Inf] {
            let before = f.distance(&g, p).unwrap();
            let after = f.clamp_unit().distance(&g.clamp_unit(), p).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn hellinger_is_a_metric(k in 1usize..4, seed in any::<u64>()) {
        let bounds = ParamBounds::new(k, 1.0, 0.5, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps: Vec<_> = (0..3).map(|_| bounds.random_param(&mut rng)).collect();
        let h = |a: usize, b: usize| hellinger_gaussian(&ps[a], &ps[b]).unwrap();
        prop_assert!((h(0, 1) - h(1, 0)).abs() <= 1e-12);
        prop_assert!(h(0, 0) <= 1e-7);
        prop_assert!(h(0, 2) <= h(0, 1) + h(1, 2) + 1e-12);
    }

    #[test]
    fn mixing_preserves_kraft(weights in prop::collection::vec(0.0f64..5.0, 1..4), top in 1usize..5) {
        prop_assume!(kraft_sum(weights.iter().copied()) <= 1.0);
        let m = design(20);
        let mut streams = Vec::new();
        for &nu in &weights {
            let models = polynomial_models(&m, top, |d| 1.0 + d as f64);
            streams.push((ModelStream::from_models(models).unwrap(), nu));
        }
        let mixed = mix_streams(streams).unwrap();
        let cert = mixed.certificate().unwrap();
        let models = mixed.collect_models().unwrap();
        let sum = kraft_sum(models.iter().map(LinearModel::delta));
        prop_assert!(sum <= 1.0 + 1e-12);
        prop_assert!((sum - cert.sum).abs() <= 1e-12);
    }

    #[test]
    fn chosen_penalty_falls_as_kappa_grows(seed in any::<u64>(), low in 0.5f64..4.0, raise in 0.1f64..4.0) {
        use rand_distr::{Distribution, StandardNormal};
        let m = design(60);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let responses: Vec<f64> = m
            .nodes()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (3.0 * x[0]).sin() + 0.5 * z
            })
            .collect();
        let data = RegressionData::new(m.clone(), responses, 0.5).unwrap();
        let pick = |kappa: f64| {
            let models = polynomial_models(&m, 7, |d| 1.0 + d as f64);
            let res = penalized_select(ModelStream::from_models(models).unwrap(), &data, kappa).unwrap();
            let s = res.summary();
            ((s.charged_dim.max(1)) as f64 + s.delta, s.rss)
        };
        let (pen_low, rss_low) = pick(low);
        let (pen_high, rss_high) = pick(low + raise);
        prop_assert!(pen_high <= pen_low + 1e-12);
        prop_assert!(rss_high >= rss_low - 1e-12);
    }
}
