//! Gaussian geometry for mixture models: Frobenius norm, closed-form
//! Hellinger distance, the Lipschitz bound of the root-density
//! parametrization, and nets of parameter balls.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{domain, structure, Result};
use crate::nets::{lattice_points, NET_CAP};

const SYMMETRY_TOL: f64 = 1e-10;

pub fn frobenius_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn log_det_spd(a: &DMatrix<f64>) -> f64 {
    let chol = a.clone().cholesky().expect("positive definite");
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Mean `m` and covariance `C = Σ²` of a nondegenerate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParam {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Symmetric square root `Σ`.
    root: DMatrix<f64>,
    cov_eigvals: Vec<f64>,
}

impl GaussianParam {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<GaussianParam> {
        let k = mean.len();
        if k == 0 || cov.nrows() != k || cov.ncols() != k {
            return structure("mean and covariance dimensions differ");
        }
        if (&cov - cov.transpose()).amax() > SYMMETRY_TOL {
            return domain("covariance is not symmetric");
        }
        let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
        if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
            return domain("covariance is not positive definite");
        }
        let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let root = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
        Ok(GaussianParam { mean: DVector::from_vec(mean), cov, root, cov_eigvals: eig.eigenvalues.iter().copied().collect() })
    }

    /// Builds a parameter and checks it against the bounds.
    pub fn bounded(mean: Vec<f64>, cov: DMatrix<f64>, bounds: &ParamBounds) -> Result<GaussianParam> {
        let p = GaussianParam::new(mean, cov)?;
        bounds.check(&p)?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }

    fn log_det(&self) -> f64 {
        log_det_spd(&self.cov)
    }

    /// `(m, Σ)` flattened, the coordinates of the Lipschitz bound.
    pub fn theta(&self) -> Vec<f64> {
        self.mean.iter().chain(self.root.iter()).copied().collect()
    }

    /// Log density with respect to Lebesgue measure.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let k = self.dim() as f64;
        let d = DVector::from_column_slice(x) - &self.mean;
        let solved = self.cov.clone().cholesky().expect("positive definite").solve(&d);
        -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + self.log_det() + d.dot(&solved))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::<f64>::from_iterator(self.dim(), (0..self.dim()).map(|_| StandardNormal.sample(rng)));
        (&self.mean + &self.root * z).iter().copied().collect()
    }
}

/// `|m| ≤ r` and covariance eigenvalues in `[ρ̲², ρ̄²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamBounds {
    pub k: usize,
    pub r_max: f64,
    pub rho_low: f64,
    pub rho_high: f64,
}

impl ParamBounds {
    pub fn new(k: usize, r_max: f64, rho_low: f64, rho_high: f64) -> Result<ParamBounds> {
        if k == 0 || !(r_max >= 0.0 && rho_low > 0.0 && rho_high >= rho_low) {
            return domain("bounds need k ≥ 1, r ≥ 0 and 0 < ρ_low ≤ ρ_high");
        }
        Ok(ParamBounds { k, r_max, rho_low, rho_high })
    }

    /// `r²/(2ρ̄²) + k log(√2 ρ̄/ρ̲)`.
    pub fn b(&self) -> f64 {
        self.r_max * self.r_max / (2.0 * self.rho_high * self.rho_high)
            + self.k as f64 * (std::f64::consts::SQRT_2 * self.rho_high / self.rho_low).ln()
    }

    /// `√k ρ̄ + r`, a bound on `|θ|`.
    pub fn radius(&self) -> f64 {
        (self.k as f64).sqrt() * self.rho_high + self.r_max
    }

    /// `√(k/2) e^{-b/2} / ρ̲`.
    pub fn lipschitz(&self) -> f64 {
        (self.k as f64 / 2.0).sqrt() * (-self.b() / 2.0).exp() / self.rho_low
    }

    pub fn check(&self, p: &GaussianParam) -> Result<()> {
        if p.dim() != self.k {
            return structure(format!("parameter in dimension {}, bounds for {}", p.dim(), self.k));
        }
        let tol = 1e-9;
        if p.mean.norm() > self.r_max * (1.0 + tol) + tol {
            return domain(format!("mean norm {} above r = {}", p.mean.norm(), self.r_max));
        }
        let (lo, hi) = (self.rho_low * self.rho_low, self.rho_high * self.rho_high);
        if p.cov_eigvals.iter().any(|&v| v < lo * (1.0 - tol) || v > hi * (1.0 + tol)) {
            return domain("covariance eigenvalues outside [ρ_low², ρ_high²]");
        }
        Ok(())
    }

    /// Random parameter inside the bounds.
    pub fn random_param<R: Rng + ?Sized>(&self, rng: &mut R) -> GaussianParam {
        let k = self.k;
        let dir = DVector::<f64>::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
        let radius = self.r_max * rng.random::<f64>().powf(1.0 / k as f64);
        let mean = dir.normalize() * radius;
        let q = DMatrix::<f64>::from_iterator(k, k, (0..k * k).map(|_| StandardNormal.sample(rng))).qr().q();
        let scales = DVector::from_iterator(k, (0..k).map(|_| {
            let rho: f64 = rng.random_range(self.rho_low..=self.rho_high);
            rho * rho
        }));
        let cov = &q * DMatrix::from_diagonal(&scales) * q.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        GaussianParam::new(mean.iter().copied().collect(), cov).expect("in-bounds covariance is positive definite")
    }
}

/// Closed-form Hellinger distance `h` (with `h² = ½∫(√f - √g)²`).
pub fn hellinger_gaussian(p0: &GaussianParam, p1: &GaussianParam) -> Result<f64> {
    Ok(hellinger_squared(p0, p1)?.sqrt())
}

pub fn hellinger_squared(p0: &GaussianParam, p1: &GaussianParam) -> Result<f64> {
    if p0.dim() != p1.dim() {
        return structure("Gaussians live in different dimensions");
    }
    let avg = (&p0.cov + &p1.cov) * 0.5;
    let log_det_avg = log_det_spd(&avg);
    let chol = avg.cholesky().expect("average of positive definite matrices");
    let dm = &p1.mean - &p0.mean;
    let quad = dm.dot(&chol.solve(&dm));
    let log_affinity = 0.25 * (p0.log_det() + p1.log_det()) - 0.5 * log_det_avg - quad / 8.0;
    Ok((-log_affinity.exp_m1()).clamp(0.0, 1.0))
}

/// `h²` by midpoint quadrature of `½∫(√f - √g)²` for `k ∈ {1, 2}`.
pub fn hellinger_quadrature(p0: &GaussianParam, p1: &GaussianParam, per_axis: usize) -> Result<f64> {
    let k = p0.dim();
    if p1.dim() != k || !(1..=2).contains(&k) {
        return domain("quadrature is available for k = 1 and k = 2");
    }
    let spread = |p: &GaussianParam| p.cov_eigvals.iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
    let width = 12.0 * spread(p0).max(spread(p1));
    let lo: Vec<f64> = (0..k).map(|a| p0.mean[a].min(p1.mean[a]) - width).collect();
    let hi: Vec<f64> = (0..k).map(|a| p0.mean[a].max(p1.mean[a]) + width).collect();
    let steps: Vec<f64> = (0..k).map(|a| (hi[a] - lo[a]) / per_axis as f64).collect();
    let cell: f64 = steps.iter().product();
    let mut total = 0.0;
    let mut x = vec![0.0; k];
    for flat in 0..per_axis.pow(k as u32) {
        let mut rest = flat;
        for a in 0..k {
            x[a] = lo[a] + steps[a] * ((rest % per_axis) as f64 + 0.5);
            rest /= per_axis;
        }
        let d = (0.5 * p0.log_density(&x)).exp() - (0.5 * p1.log_density(&x)).exp();
        total += d * d;
    }
    Ok(0.5 * total * cell)
}

/// `h² = 1 - E_f[√(g/f)]` by seeded Monte Carlo, with its standard error.
pub fn hellinger_monte_carlo<R: Rng + ?Sized>(p0: &GaussianParam, p1: &GaussianParam, samples: usize, rng: &mut R) -> (f64, f64) {
    let values: Vec<f64> = (0..samples.max(2))
        .map(|_| {
            let x = p0.sample(rng);
            (0.5 * (p1.log_density(&x) - p0.log_density(&x))).exp()
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (1.0 - mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub h: f64,
    /// `√2 e^{-b/2} h`.
    pub lhs: f64,
    /// `R |θ₀ - θ₁|`.
    pub rhs: f64,
    /// `4h²` and `(k/ρ̲²)|θ₀ - θ₁|²`.
    pub intermediate_lhs: f64,
    pub intermediate_rhs: f64,
    pub holds: bool,
}

pub fn mixture_param_lipschitz_check(p0: &GaussianParam, p1: &GaussianParam, bounds: &ParamBounds) -> Result<LipschitzReport> {
    bounds.check(p0)?;
    bounds.check(p1)?;
    let h2 = hellinger_squared(p0, p1)?;
    let h = h2.sqrt();
    let dist = p0.theta().iter().zip(p1.theta()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let lhs = std::f64::consts::SQRT_2 * (-bounds.b() / 2.0).exp() * h;
    let rhs = bounds.lipschitz() * dist;
    let intermediate_lhs = 4.0 * h2;
    let intermediate_rhs = bounds.k as f64 / (bounds.rho_low * bounds.rho_low) * dist * dist;
    let holds = lhs <= rhs + 1e-9 && intermediate_lhs <= intermediate_rhs + 1e-9;
    Ok(LipschitzReport { h, lhs, rhs, intermediate_lhs, intermediate_rhs, holds })
}

/// `max_x e^{-b} p(θ,x)` over a grid, where `p` is the density relative to
/// `𝒩(0, 2ρ̄² I_k)`; the embedding needs this to be at most 1.
pub fn embedding_peak(p: &GaussianParam, bounds: &ParamBounds, per_axis: usize) -> Result<f64> {
    bounds.check(p)?;
    let k = p.dim();
    let s2 = 2.0 * bounds.rho_high * bounds.rho_high;
    let half = bounds.r_max + 6.0 * bounds.rho_high;
    let per = per_axis.max(2);
    let mut best = f64::NEG_INFINITY;
    let mut x = vec![0.0; k];
    let total = per.checked_pow(k as u32).filter(|t| *t <= 50_000_000).ok_or_else(|| crate::Error::Budget {
        what: "embedding grid".into(),
        value: (per as f64).powi(k as i32),
        cap: 5e7,
    })?;
    for flat in 0..total {
        let mut rest = flat;
        for v in x.iter_mut() {
            *v = -half + 2.0 * half * (rest % per) as f64 / (per - 1) as f64;
            rest /= per;
        }
        let log_ref = -0.5 * k as f64 * (2.0 * std::f64::consts::PI * s2).ln() - x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2);
        best = best.max(p.log_density(&x) - log_ref);
    }
    Ok((best - bounds.b()).exp())
}

/// Net of the parameter ball of radius `M` at `η = (R e^i)^{-1/β}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaNet {
    pub dim: usize,
    pub eta: f64,
    /// Flat, `dim` coordinates per point.
    pub points: Vec<f64>,
    pub log_card: f64,
    /// `k [log(1 + 2 M R^{1/β}) + i/β]`.
    pub log_card_bound: f64,
    /// `log_card_bound + i`.
    pub delta: f64,
}

impl ThetaNet {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    /// Distance from `x` to the nearest member.
    pub fn nearest_distance(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|j| self.point(j).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

/// Lattice points in the ball of radius `M + ρ`, with `ρ < η` the lattice
/// covering radius, so the whole radius-`M` ball is covered within `η` and
/// members are more than `η` apart. The size is checked against the
/// log-cardinality bound.
pub fn theta_net(radius: f64, beta: f64, lipschitz: f64, i: u32, k: usize, seed: u64) -> Result<ThetaNet> {
    if !(beta > 0.0 && beta <= 1.0) {
        return domain("beta must lie in (0,1]");
    }
    if !(radius > 0.0 && lipschitz > 0.0) || i < 1 || k == 0 {
        return domain("theta net needs M > 0, R > 0, i ≥ 1 and k ≥ 1");
    }
    let eta = (lipschitz * (i as f64).exp()).powf(-1.0 / beta);
    let log_card_bound = k as f64 * ((1.0 + 2.0 * radius * lipschitz.powf(1.0 / beta)).ln() + i as f64 / beta);
    let points = if radius <= eta {
        vec![0.0; k]
    } else {
        let cap = log_card_bound.exp().floor().min(NET_CAP as f64) as usize;
        let probe = lattice_points(k, eta, 0.0, seed, 1)?;
        lattice_points(k, eta, radius + probe.covering, seed, cap)?.points
    };
    let len = points.len() / k;
    Ok(ThetaNet { dim: k, eta, points, log_card: (len as f64).ln(), log_card_bound, delta: log_card_bound + i as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub pair: usize,
    pub h: f64,
    pub h2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Distance table over seeded random in-bounds pairs.
pub fn distance_table<R: Rng + ?Sized>(bounds: &ParamBounds, pairs: usize, rng: &mut R) -> Result<Vec<DistanceRow>> {
    (0..pairs)
        .map(|pair| {
            let p0 = bounds.random_param(rng);
            let p1 = bounds.random_param(rng);
            let rep = mixture_param_lipschitz_check(&p0, &p1, bounds)?;
            Ok(DistanceRow { pair, h: rep.h, h2: rep.h * rep.h, lhs: rep.lhs, rhs: rep.rhs, holds: rep.holds })
        })
        .collect()
}

pub fn write_distance_csv<W: Write>(rows: &[DistanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(m: f64, v: f64) -> GaussianParam {
        GaussianParam::new(vec![m], DMatrix::from_element(1, 1, v)).unwrap()
    }

    #[test]
    fn frobenius_examples() {
        assert_abs_diff_eq!(frobenius_norm(&DMatrix::identity(3, 3)), 3f64.sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            assert!(frobenius_norm(&(&a * &b)) <= frobenius_norm(&a) * frobenius_norm(&b) + 1e-12);
        }
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger_gaussian(&scalar(0.0, 1.0), &scalar(0.0, 1.0)).unwrap(), 0.0);
        let h2 = hellinger_squared(&scalar(0.0, 1.0), &scalar(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(h2, 1.0 - (-0.125f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(h2, 0.11750, epsilon = 1e-5);
        let h2 = hellinger_squared(&scalar(0.0, 1.0), &scalar(0.0, 4.0)).unwrap();
        assert_abs_diff_eq!(h2, 1.0 - 0.8f64.sqrt(), epsilon = 1e-12);
        let q = hellinger_quadrature(&scalar(0.0, 1.0), &scalar(0.0, 4.0), 4000).unwrap();
        assert_abs_diff_eq!(q, h2, epsilon = 1e-6);
    }

    #[test]
    fn lipschitz_on_random_pairs() {
        let bounds = ParamBounds::new(2, 1.0, 0.5, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for row in distance_table(&bounds, 100, &mut rng).unwrap() {
            assert!(row.holds, "{row:?}");
        }
        let p = bounds.random_param(&mut rng);
        let r = mixture_param_lipschitz_check(&p, &p, &bounds).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let bounds = ParamBounds::new(1, 1.0, 0.5, 1.0).unwrap();
        assert!(GaussianParam::bounded(vec![2.0], DMatrix::from_element(1, 1, 0.5), &bounds).is_err());
        assert!(GaussianParam::bounded(vec![0.0], DMatrix::from_element(1, 1, 4.0), &bounds).is_err());
        assert!(GaussianParam::new(vec![0.0], DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    #[test]
    fn embedding_stays_below_one() {
        let bounds = ParamBounds::new(2, 1.0, 0.5, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = bounds.random_param(&mut rng);
            assert!(embedding_peak(&p, &bounds, 201).unwrap() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn theta_net_examples() {
        let net = theta_net(1.0, 1.0, 1.0, 1, 1, 0).unwrap();
        assert_abs_diff_eq!(net.log_card_bound, 3f64.ln() + 1.0, epsilon = 1e-12);
        assert!(net.len() <= 8);
        assert!(net.log_card <= net.log_card_bound);
        assert_abs_diff_eq!(net.delta, net.log_card_bound + 1.0);
        let net = theta_net(0.01, 1.0, 1.0, 1, 2, 0).unwrap();
        assert_eq!(net.len(), 1);
        let net = theta_net(1.0, 1.0, 2.0, 1, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let dir = DVector::<f64>::from_iterator(2, (0..2).map(|_| StandardNormal.sample(&mut rng)));
            let x = dir.normalize() * rng.random::<f64>().sqrt();
            assert!(net.nearest_distance(x.as_slice()) <= net.eta);
        }
    }
}
