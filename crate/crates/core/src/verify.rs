//! Quick randomized property suite behind the `verify` command.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::approx::PriorScheme;
use crate::composite::{composition_gap_bound, critical_index, INDEX_CAP};
use crate::families::{ann_budget, family_stream, pca_decompose, pca_residual_of, FamilyConfig, FamilyKind, PartitionScheme};
use crate::function::{lopt_optimize, DesignMeasure, GridFunction, Lp, Modulus};
use crate::gaussians::{hellinger_quadrature, hellinger_squared, mixture_param_lipschitz_check, ParamBounds};
use crate::model::{kraft_sum, LinearModel, KRAFT_TOL};
use crate::nets::{build_eta_net, clamp_model, net_approx_check, NET_SLACK};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    first: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Tally {
        Tally { name, cases: 0, failures: 0, first: None }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(describe());
            }
        }
    }

    fn error(&mut self, e: crate::Error) {
        self.record(false, || e.to_string());
    }

    fn finish(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name.to_string(),
            cases: self.cases,
            failures: self.failures,
            detail: self.first.unwrap_or_else(|| "ok".to_string()),
        }
    }
}

/// Runs every property group; `scale` multiplies the number of random cases.
pub fn run_suite(seed: u64, scale: usize) -> Vec<CheckOutcome> {
    let scale = scale.max(1);
    vec![
        check_kraft(seed),
        check_nets(seed, 10 * scale),
        check_composition(seed, 30 * scale),
        check_scalar(seed, 20 * scale),
        check_hellinger(seed, 10 * scale),
        check_pca(seed, 10 * scale),
        check_ann(),
    ]
}

fn uniform_design(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Arc<DesignMeasure>> {
    let nodes = (0..n * k).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Ok(Arc::new(DesignMeasure::empirical_flat(k, nodes)?))
}

fn check_kraft(seed: u64) -> CheckOutcome {
    let mut t = Tally::new("kraft");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut configs = Vec::new();
    let mut plain = FamilyConfig::new(FamilyKind::Plain, 2);
    plain.r = 1;
    plain.outer = PartitionScheme::Recursive { max_cells: 4, max_level: None };
    configs.push(plain);
    let mut exact = FamilyConfig::new(FamilyKind::Plain, 1);
    exact.prior = PriorScheme::PaperC;
    configs.push(exact);
    let mut smooth = FamilyConfig::new(FamilyKind::SmoothComposite, 2);
    smooth.outer = PartitionScheme::Recursive { max_cells: 2, max_level: None };
    smooth.inner = PartitionScheme::Recursive { max_cells: 1, max_level: None };
    configs.push(smooth);
    configs.push(FamilyConfig::new(FamilyKind::Additive, 2));
    let mut multi = FamilyConfig::new(FamilyKind::MultiIndex, 2);
    multi.outer = PartitionScheme::Regular { max_level: 2 };
    configs.push(multi);
    configs.push(FamilyConfig::new(FamilyKind::PcaKnown, 2));
    configs.push(FamilyConfig::new(FamilyKind::NestedPolynomial, 1));
    for cfg in configs {
        let design = match uniform_design(cfg.k, 60, &mut rng) {
            Ok(d) => d,
            Err(e) => {
                t.error(e);
                continue;
            }
        };
        let outcome = family_stream(&cfg, &design).and_then(|s| {
            let cert = s.certificate().ok_or_else(|| crate::Error::Refused("stream without certificate".into()))?;
            let models = s.collect_models()?;
            Ok((cert, kraft_sum(models.iter().map(LinearModel::delta))))
        });
        match outcome {
            Ok((cert, sum)) => t.record(cert.sum <= 1.0 + KRAFT_TOL && sum <= cert.sum * (1.0 + KRAFT_TOL) + KRAFT_TOL, || {
                format!("{:?}: sum {sum}, certificate {}", cfg.family, cert.sum)
            }),
            Err(e) => t.error(e),
        }
    }
    t.finish()
}

fn polynomial_model(dim: usize) -> Result<LinearModel> {
    let m = Arc::new(DesignMeasure::linspace(101)?);
    let fs = (0..dim).map(|d| GridFunction::from_fn(&m, |x| x[0].powi(d as i32))).collect::<Result<Vec<_>>>()?;
    LinearModel::span(format!("poly{dim}"), &fs, 0.0)
}

fn check_nets(seed: u64, cases: usize) -> CheckOutcome {
    let mut t = Tally::new("nets");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for case in 0..cases {
        let dim = rng.random_range(1..=3usize);
        let eta = [1.0, 0.5, 0.25][rng.random_range(0..3usize)];
        let run = || -> Result<(bool, String)> {
            let model = clamp_model(&polynomial_model(dim)?)?;
            let net = build_eta_net(&model, eta, seed.wrapping_add(case as u64))?;
            let bound = (5.0 / eta).powi(dim as i32);
            let mut ok = (net.len() as f64) <= bound && net.separation() > eta && net.covering_radius() <= eta + NET_SLACK;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(case as u64));
            for _ in 0..20 {
                let values = model.measure().nodes().map(|x| (rng.random_range(-1.0..1.0) + x[0]).clamp(-1.0, 1.0)).collect();
                let v = GridFunction::new(model.measure().clone(), values)?;
                ok &= net_approx_check(&net, &v)?.holds;
            }
            Ok((ok, format!("dim {dim}, eta {eta}: {} members, separation {}", net.len(), net.separation())))
        };
        match run() {
            Ok((ok, what)) => t.record(ok, || what),
            Err(e) => t.error(e),
        }
    }
    t.finish()
}

fn check_composition(seed: u64, cases: usize) -> CheckOutcome {
    let mut t = Tally::new("composition");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let measure = match DesignMeasure::linspace(64) {
        Ok(m) => Arc::new(m),
        Err(e) => {
            t.error(e);
            return t.finish();
        }
    };
    for _ in 0..cases {
        let l = rng.random_range(1..=2usize);
        let coef: Vec<f64> = (0..l).map(|_| rng.random_range(0.1..2.0)).collect();
        let expo: Vec<f64> = (0..l).map(|_| rng.random_range(0.3..=1.0)).collect();
        let centers: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = rng.random_range(-0.2..0.2);
        let (c1, e1, z1) = (coef.clone(), expo.clone(), centers.clone());
        let g = move |y: &[f64]| (0..y.len()).map(|j| c1[j] * (y[j] - z1[j]).abs().powf(e1[j])).sum::<f64>();
        let (c2, e2, z2) = (coef.clone(), expo.clone(), centers.clone());
        let f = move |y: &[f64]| shift + (0..y.len()).map(|j| c2[j] * (y[j] - z2[j]).abs().powf(e2[j])).sum::<f64>() * 0.9;
        let p = [Lp::L1, Lp::L2][rng.random_range(0..2usize)];
        let run = |rng: &mut ChaCha8Rng| -> Result<bool> {
            let mut u = Vec::new();
            let mut tt = Vec::new();
            let mut w = Vec::new();
            for j in 0..l {
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                u.push(GridFunction::from_fn(&measure, |x| (a * x[0] + b * x[0] * x[0]).clamp(-1.0, 1.0))?);
                let jitter = rng.random_range(0.0..0.3);
                tt.push(GridFunction::from_fn(&measure, |x| (a * x[0] + b * x[0] * x[0] + jitter * (5.0 * x[0]).sin()).clamp(-1.0, 1.0))?);
                w.push(Modulus::holder(coef[j], expo[j])?);
            }
            Ok(composition_gap_bound(&g, &f, &u, &tt, &w, p, 41)?.holds)
        };
        match run(&mut rng) {
            Ok(ok) => t.record(ok, || format!("l={l}, p={p:?}")),
            Err(e) => t.error(e),
        }
    }
    t.finish()
}

fn check_scalar(seed: u64, cases: usize) -> CheckOutcome {
    let mut t = Tally::new("scalar");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    for _ in 0..cases {
        let a = 10f64.powf(rng.random_range(-2.0..4.0));
        let b = 10f64.powf(rng.random_range(-4.0..0.0));
        let theta = rng.random_range(0.1..3.0);
        match lopt_optimize(a, b, theta, 1_000_000) {
            Ok(r) => t.record(!r.guaranteed || r.value <= r.paper_bound * (1.0 + 1e-12), || format!("a={a}, b={b}, theta={theta}")),
            Err(e) => t.error(e),
        }
        let alpha = rng.random_range(0.2..=1.0);
        let lip = rng.random_range(0.5..3.0);
        let l = rng.random_range(1..=3usize);
        let dim = rng.random_range(1..=20usize);
        let tau = 10f64.powf(rng.random_range(-4.0..-1.0));
        let run = || -> Result<bool> {
            let w = Modulus::holder(lip, alpha)?;
            let i = critical_index(&w, l, tau, dim, INDEX_CAP)?;
            let holds = |i: u32| -> Result<bool> {
                let wi = w.eval((-(i as f64)).exp())?;
                Ok(l as f64 * wi * wi <= tau * i as f64 * dim as f64)
            };
            Ok(holds(i)? && (1..i).map(holds).collect::<Result<Vec<_>>>()?.iter().all(|h| !h))
        };
        match run() {
            Ok(ok) => t.record(ok, || format!("alpha={alpha}, L={lip}, l={l}, D={dim}, tau={tau}")),
            Err(e) => t.error(e),
        }
    }
    t.finish()
}

fn check_hellinger(seed: u64, cases: usize) -> CheckOutcome {
    let mut t = Tally::new("hellinger");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    for case in 0..cases {
        let k = 1 + case % 2;
        let run = |rng: &mut ChaCha8Rng| -> Result<(bool, String)> {
            let bounds = ParamBounds::new(k, 1.0, 0.5, 1.5)?;
            let p0 = bounds.random_param(rng);
            let p1 = bounds.random_param(rng);
            let closed = hellinger_squared(&p0, &p1)?;
            let quad = hellinger_quadrature(&p0, &p1, if k == 1 { 4001 } else { 301 })?;
            let lip = mixture_param_lipschitz_check(&p0, &p1, &bounds)?;
            Ok(((closed - quad).abs() <= 1e-4 && lip.holds, format!("k={k}: closed h² {closed}, quadrature {quad}")))
        };
        match run(&mut rng) {
            Ok((ok, what)) => t.record(ok, || what),
            Err(e) => t.error(e),
        }
    }
    t.finish()
}

fn check_pca(seed: u64, cases: usize) -> CheckOutcome {
    let mut t = Tally::new("pca");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
    for _ in 0..cases {
        let k = rng.random_range(1..=6usize);
        let run = |rng: &mut ChaCha8Rng| -> Result<()> {
            let scales: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let nodes = (0..80 * k).map(|i| rng.random_range(-1.0..1.0) * scales[i % k]).collect();
            let m = DesignMeasure::empirical_flat(k, nodes)?;
            let pca = pca_decompose(&m)?;
            for l in 0..=k {
                pca_residual_of(&m, &pca, l)?;
            }
            Ok(())
        };
        match run(&mut rng) {
            Ok(()) => t.record(true, String::new),
            Err(e) => t.error(e),
        }
    }
    t.finish()
}

fn check_ann() -> CheckOutcome {
    let mut t = Tally::new("ann-budget");
    match ann_budget(1.0, 1.0, 1.0, 1.0, 1.0, 1, 1, 1e-4) {
        Ok(b) => t.record((b.l_star, b.q_star) == (58, 3), || format!("got ({}, {})", b.l_star, b.q_star)),
        Err(e) => t.error(e),
    }
    match ann_budget(0.01, 0.01, 1.0, 1.0, 1.0, 2, 1, 1e-2) {
        Ok(b) => t.record((b.l_star, b.q_star) == (1, 2), || format!("got ({}, {})", b.l_star, b.q_star)),
        Err(e) => t.error(e),
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_green() {
        for outcome in run_suite(0, 1) {
            assert!(outcome.passed(), "{outcome:?}");
            assert!(outcome.cases > 0);
        }
    }
}
