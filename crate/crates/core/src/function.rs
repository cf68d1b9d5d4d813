//! Measures, sampled functions, norms, moduli of continuity and the two
//! scalar inequalities that the rest of the crate builds on.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, structure, Error, Result};

/// Relative pivot tolerance used when orthonormalizing.
pub const PIVOT_TOL: f64 = 1e-10;
/// Tolerance on Gram matrices of orthonormal bases.
pub const ORTHO_TOL: f64 = 1e-8;
/// Slack allowed when checking inequalities.
pub const INEQ_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    LebesgueQuadrature,
    EmpiricalDesign,
}

/// A probability measure on `[-1,1]^k` supported on finitely many nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMeasure {
    kind: MeasureKind,
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl DesignMeasure {
    /// Builds a measure from row-major node coordinates.
    pub fn from_flat(kind: MeasureKind, dim: usize, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return domain("measure dimension must be at least 1");
        }
        if nodes.len() != dim * weights.len() {
            return structure(format!(
                "{} coordinates do not match {} weights in dimension {}",
                nodes.len(),
                weights.len(),
                dim
            ));
        }
        if weights.is_empty() {
            return domain("measure needs at least one node");
        }
        if let Some(x) = nodes.iter().find(|x| !x.is_finite() || x.abs() > 1.0) {
            return domain(format!("node coordinate {x} outside [-1,1]"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return domain("weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { kind, dim, nodes, weights })
    }

    pub fn new(kind: MeasureKind, dim: usize, points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        if points.iter().any(|p| p.len() != dim) {
            return structure("every point must have the measure dimension");
        }
        let nodes = points.iter().flatten().copied().collect();
        Self::from_flat(kind, dim, nodes, weights)
    }

    /// Empirical measure giving weight 1/n to each design point.
    pub fn empirical(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        Self::new(MeasureKind::EmpiricalDesign, dim, points, uniform_weights(n))
    }

    pub fn empirical_flat(dim: usize, nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len() / dim.max(1);
        Self::from_flat(MeasureKind::EmpiricalDesign, dim, nodes, uniform_weights(n))
    }

    /// Midpoint tensor grid with `per_axis` nodes on every axis.
    pub fn tensor_grid(dim: usize, per_axis: usize) -> Result<Self> {
        if per_axis == 0 {
            return domain("grid needs at least one node per axis");
        }
        let axis: Vec<f64> = (0..per_axis)
            .map(|j| -1.0 + (2 * j + 1) as f64 / per_axis as f64)
            .collect();
        let total = per_axis.checked_pow(dim as u32).unwrap_or(usize::MAX);
        if total > 10_000_000 {
            return Err(Error::Budget { what: "tensor grid size".into(), value: total as f64, cap: 1e7 });
        }
        let mut nodes = Vec::with_capacity(total * dim);
        for flat in 0..total {
            let mut rest = flat;
            for _ in 0..dim {
                nodes.push(axis[rest % per_axis]);
                rest /= per_axis;
            }
        }
        Self::from_flat(MeasureKind::LebesgueQuadrature, dim, nodes, uniform_weights(total))
    }

    /// Equispaced nodes on `[-1,1]` including both endpoints, trapezoid weights.
    pub fn linspace(n: usize) -> Result<Self> {
        if n < 2 {
            return domain("linspace needs at least two nodes");
        }
        let nodes: Vec<f64> = (0..n).map(|j| -1.0 + 2.0 * j as f64 / (n - 1) as f64).collect();
        let mut weights = vec![1.0 / (n - 1) as f64; n];
        weights[0] *= 0.5;
        weights[n - 1] *= 0.5;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::from_flat(MeasureKind::LebesgueQuadrature, 1, nodes, weights)
    }

    /// Uniform Monte Carlo quadrature on the cube with a fixed seed.
    pub fn monte_carlo(dim: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..n * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::from_flat(MeasureKind::LebesgueQuadrature, dim, nodes, uniform_weights(n))
    }

    /// Default Lebesgue quadrature: 64 nodes per axis up to dimension 3,
    /// seeded Monte Carlo above.
    pub fn lebesgue(dim: usize) -> Result<Self> {
        if dim <= 3 {
            Self::tensor_grid(dim, 64)
        } else {
            Self::monte_carlo(dim, 16_384, 0x5eed)
        }
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim)
    }

    pub fn flat_nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when both measures describe the same nodes and weights.
    pub fn same_as(&self, other: &DesignMeasure) -> bool {
        std::ptr::eq(self, other) || self == other
    }
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Exponent of an `L_p` norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lp {
    L1,
    L2,
    Inf,
}

impl Lp {
    /// `2^{1/p}` with the convention `2^{1/inf} = 1`.
    pub fn two_root(self) -> f64 {
        match self {
            Lp::L1 => 2.0,
            Lp::L2 => std::f64::consts::SQRT_2,
            Lp::Inf => 1.0,
        }
    }
}

/// A function sampled at the nodes of a measure.
#[derive(Debug, Clone)]
pub struct GridFunction {
    measure: Arc<DesignMeasure>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(measure: Arc<DesignMeasure>, values: Vec<f64>) -> Result<Self> {
        if values.len() != measure.len() {
            return structure(format!("{} values for {} nodes", values.len(), measure.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("function values must be finite");
        }
        Ok(Self { measure, values })
    }

    pub fn from_fn(measure: &Arc<DesignMeasure>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = measure.nodes().map(f).collect();
        Self::new(measure.clone(), values)
    }

    pub fn constant(measure: &Arc<DesignMeasure>, c: f64) -> Result<Self> {
        Self::new(measure.clone(), vec![c; measure.len()])
    }

    pub fn measure(&self) -> &Arc<DesignMeasure> {
        &self.measure
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn lp_norm(&self, p: Lp) -> f64 {
        let w = self.measure.weights();
        match p {
            Lp::L1 => self.values.iter().zip(w).map(|(v, w)| w * v.abs()).sum(),
            Lp::L2 => self.values.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>().sqrt(),
            Lp::Inf => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    fn check_same(&self, other: &GridFunction) -> Result<()> {
        if Arc::ptr_eq(&self.measure, &other.measure) || self.measure.same_as(&other.measure) {
            Ok(())
        } else {
            structure("functions live on different measures")
        }
    }

    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        self.check_same(other)?;
        Ok(weighted_dot(self.measure.weights(), &self.values, &other.values))
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { measure: self.measure.clone(), values })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self { measure: self.measure.clone(), values })
    }

    pub fn distance(&self, other: &GridFunction, p: Lp) -> Result<f64> {
        Ok(self.sub(other)?.lp_norm(p))
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        Self { measure: self.measure.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise `(-1 ∨ f) ∧ 1`.
    pub fn clamp_unit(&self) -> GridFunction {
        self.map(|v| v.clamp(-1.0, 1.0))
    }
}

/// Weighted `p`-norm of a sampled function.
pub fn lp_norm(f: &GridFunction, p: Lp) -> f64 {
    f.lp_norm(p)
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Weighted modified Gram–Schmidt with one reorthogonalization pass.
///
/// Columns whose norm after projection falls below `PIVOT_TOL` times their
/// original norm are dropped; their input indices are returned.
pub fn orthonormalize_columns(columns: Vec<Vec<f64>>, weights: &[f64]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    let mut dropped = Vec::new();
    for (index, mut col) in columns.into_iter().enumerate() {
        let original = weighted_dot(weights, &col, &col).sqrt();
        if original == 0.0 {
            dropped.push(index);
            continue;
        }
        for _ in 0..2 {
            for q in &kept {
                let c = weighted_dot(weights, q, &col);
                col.iter_mut().zip(q).for_each(|(x, q)| *x -= c * q);
            }
        }
        let norm = weighted_dot(weights, &col, &col).sqrt();
        if norm <= PIVOT_TOL * original {
            dropped.push(index);
            continue;
        }
        col.iter_mut().for_each(|x| *x /= norm);
        kept.push(col);
    }
    (kept, dropped)
}

/// Orthonormalizes a basis; errors with the first dependent index.
pub fn orthonormalize(basis: &[GridFunction]) -> Result<Vec<GridFunction>> {
    let (out, dropped) = orthonormalize_dropping(basis)?;
    match dropped.first() {
        Some(&index) => Err(Error::RankDeficient { index }),
        None => Ok(out),
    }
}

/// Orthonormalizes a basis, dropping dependent columns and reporting them.
pub fn orthonormalize_dropping(basis: &[GridFunction]) -> Result<(Vec<GridFunction>, Vec<usize>)> {
    let Some(first) = basis.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    for f in &basis[1..] {
        first.check_same(f)?;
    }
    let measure = first.measure.clone();
    let cols = basis.iter().map(|f| f.values.clone()).collect();
    let (kept, dropped) = orthonormalize_columns(cols, measure.weights());
    let out = kept.into_iter().map(|values| GridFunction { measure: measure.clone(), values }).collect();
    Ok((out, dropped))
}

/// Largest deviation of the Gram matrix of `basis` from the identity.
pub fn gram_deviation(basis: &[GridFunction]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (a, f) in basis.iter().enumerate() {
        for g in &basis[a..] {
            let target = if std::ptr::eq(f, g) { 1.0 } else { 0.0 };
            worst = worst.max((f.inner(g)? - target).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
enum ModulusForm {
    Holder { lipschitz: f64, exponent: f64 },
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

/// A concave nondecreasing modulus of continuity on `[0,2]` with `w(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulus(ModulusForm);

impl Modulus {
    /// `w(z) = lipschitz * z^exponent`.
    pub fn holder(lipschitz: f64, exponent: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Modulus(format!("Hölder constant {lipschitz} must be positive")));
        }
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::Modulus(format!("Hölder exponent {exponent} must lie in (0,1]")));
        }
        Ok(Self(ModulusForm::Holder { lipschitz, exponent }))
    }

    pub fn linear() -> Self {
        Self(ModulusForm::Holder { lipschitz: 1.0, exponent: 1.0 })
    }

    /// Piecewise-linear interpolant through `(knots, values)`; rejects input
    /// that is not concave and nondecreasing with `w(0) = 0`.
    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() || knots.len() < 2 {
            return Err(Error::Modulus("need at least two knots, one value each".into()));
        }
        if knots[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::Modulus("table must start at w(0) = 0".into()));
        }
        if (knots[knots.len() - 1] - 2.0).abs() > 1e-12 {
            return Err(Error::Modulus("table must end at z = 2".into()));
        }
        if knots.windows(2).any(|k| k[1] <= k[0]) {
            return Err(Error::Modulus("knots must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|v| v[1] < v[0]) {
            return Err(Error::Modulus("values must be finite and nondecreasing".into()));
        }
        let slopes: Vec<f64> = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
            .collect();
        let scale = slopes.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        if slopes.windows(2).any(|s| s[1] > s[0] + 1e-12 * scale) {
            return Err(Error::Modulus("values are not concave".into()));
        }
        Ok(Self(ModulusForm::Tabulated { knots, values }))
    }

    /// Least concave majorant of raw samples `(knots, raw)`, evaluated back
    /// on the knots.
    pub fn concave_majorant(knots: Vec<f64>, raw: &[f64]) -> Result<Self> {
        if knots.len() != raw.len() || knots.is_empty() {
            return Err(Error::Modulus("knots and raw values differ in length".into()));
        }
        // Upper hull by a monotone chain scan.
        let mut hull: Vec<usize> = Vec::new();
        for i in 0..knots.len() {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                let cross = (knots[b] - knots[a]) * (raw[i] - raw[a]) - (raw[b] - raw[a]) * (knots[i] - knots[a]);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        let mut values = vec![0.0; knots.len()];
        for seg in hull.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            for i in a..=b {
                let t = (knots[i] - knots[a]) / (knots[b] - knots[a]);
                values[i] = raw[a] + t * (raw[b] - raw[a]);
            }
        }
        if hull.len() == 1 {
            values[0] = raw[0];
        }
        // The hull of a nondecreasing table is nondecreasing; enforce exactly.
        for i in 1..values.len() {
            values[i] = values[i].max(values[i - 1]);
        }
        Self::tabulated(knots, values)
    }

    /// Modulus of a univariate function sampled on `m` equispaced points of
    /// `[-1,1]`: the concave majorant of the raw increment sups, returned
    /// together with those raw sups.
    pub fn from_samples(samples: &[f64]) -> Result<(Self, Vec<f64>)> {
        let m = samples.len();
        if m < 2 {
            return Err(Error::Modulus("need at least two samples".into()));
        }
        let knots: Vec<f64> = (0..m).map(|j| 2.0 * j as f64 / (m - 1) as f64).collect();
        let mut raw: Vec<f64> = (0..m)
            .map(|lag| (0..m - lag).fold(0.0f64, |acc, i| acc.max((samples[i + lag] - samples[i]).abs())))
            .collect();
        // Sup over all lags up to z, not exactly z.
        for i in 1..m {
            raw[i] = raw[i].max(raw[i - 1]);
        }
        let w = Self::concave_majorant(knots, &raw)?;
        Ok((w, raw))
    }

    pub fn as_holder(&self) -> Option<(f64, f64)> {
        match self.0 {
            ModulusForm::Holder { lipschitz, exponent } => Some((lipschitz, exponent)),
            ModulusForm::Tabulated { .. } => None,
        }
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        if !(0.0..=2.0).contains(&z) {
            return domain(format!("modulus argument {z} outside [0,2]"));
        }
        Ok(match &self.0 {
            ModulusForm::Holder { lipschitz, exponent } => lipschitz * z.powf(*exponent),
            ModulusForm::Tabulated { knots, values } => {
                let hi = knots.partition_point(|&k| k < z).clamp(1, knots.len() - 1);
                let lo = hi - 1;
                let t = (z - knots[lo]) / (knots[hi] - knots[lo]);
                values[lo] + t * (values[hi] - values[lo])
            }
        })
    }
}

pub fn modulus_eval(w: &Modulus, z: f64) -> Result<f64> {
    w.eval(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransportReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks `‖w(|h|)‖_p ≤ 2^{1/p} w(‖h‖_p)`.
pub fn concave_transport_check(w: &Modulus, h: &GridFunction, p: Lp) -> Result<TransportReport> {
    let mut transported = Vec::with_capacity(h.values.len());
    for v in &h.values {
        transported.push(w.eval(v.abs())?);
    }
    let lhs = GridFunction::new(h.measure.clone(), transported)?.lp_norm(p);
    let rhs = p.two_root() * w.eval(h.lp_norm(p))?;
    Ok(TransportReport { lhs, rhs, holds: lhs <= rhs + INEQ_SLACK })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoptResult {
    pub d_star: u64,
    pub value: f64,
    /// `max{3 a^{1/(θ+1)} b^{θ/(θ+1)}, 2b}`.
    pub paper_bound: f64,
    /// `b + min{2 a^{1/(θ+1)} b^{θ/(θ+1)}, a}`, the sharper intermediate bound.
    pub intermediate_bound: f64,
    /// Whether `d_max` is large enough for the bound to be guaranteed.
    pub guaranteed: bool,
}

/// Minimizes `a D^{-θ} + b D` over `D ∈ {1..d_max}` by direct scan.
pub fn lopt_optimize(a: f64, b: f64, theta: f64, d_max: u64) -> Result<LoptResult> {
    if d_max < 1 {
        return domain("d_max must be at least 1");
    }
    if !(a > 0.0 && b > 0.0 && theta > 0.0) {
        return domain("a, b and theta must be positive");
    }
    let objective = |d: u64| a * (d as f64).powf(-theta) + b * d as f64;
    let mut best = (1, objective(1));
    for d in 2..=d_max {
        let v = objective(d);
        if v < best.1 {
            best = (d, v);
        }
        // Past the continuous minimizer the objective only grows.
        if b * d as f64 > best.1 {
            break;
        }
    }
    let balance = a.powf(1.0 / (theta + 1.0)) * b.powf(theta / (theta + 1.0));
    let needed = (a / b).powf(1.0 / (theta + 1.0)).ceil() + 1.0;
    Ok(LoptResult {
        d_star: best.0,
        value: best.1,
        paper_bound: (3.0 * balance).max(2.0 * b),
        intermediate_bound: b + (2.0 * balance).min(a),
        guaranteed: d_max as f64 >= needed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Arc<DesignMeasure> {
        Arc::new(DesignMeasure::linspace(n).unwrap())
    }

    #[test]
    fn constant_has_unit_norm() {
        let m = grid(101);
        let one = GridFunction::constant(&m, 1.0).unwrap();
        for p in [Lp::L1, Lp::L2, Lp::Inf] {
            assert_abs_diff_eq!(one.lp_norm(p), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_norms() {
        let m = grid(1001);
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        assert_abs_diff_eq!(x.lp_norm(Lp::L2), (1.0f64 / 3.0).sqrt(), epsilon = 1e-5);
        assert_eq!(x.lp_norm(Lp::Inf), 1.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let m = grid(10);
        assert!(matches!(GridFunction::new(m, vec![0.0; 9]), Err(Error::Structure(_))));
    }

    #[test]
    fn measure_validation() {
        assert!(DesignMeasure::empirical(1, &[vec![1.5]]).is_err());
        assert!(DesignMeasure::from_flat(MeasureKind::EmpiricalDesign, 1, vec![0.0, 0.5], vec![0.5, 0.6]).is_err());
        let g = DesignMeasure::tensor_grid(2, 4).unwrap();
        assert_eq!(g.len(), 16);
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gram_schmidt_on_one_and_x() {
        let m = grid(1001);
        let one = GridFunction::constant(&m, 1.0).unwrap();
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        let q = orthonormalize(&[one.clone(), x.clone()]).unwrap();
        assert!(gram_deviation(&q).unwrap() < ORTHO_TOL);
        let nx = x.lp_norm(Lp::L2);
        for (a, b) in q[1].values().iter().zip(x.values()) {
            assert_abs_diff_eq!(*a, b / nx, epsilon = 1e-10);
        }
        // {1, 1+x} spans the same space.
        let shifted = GridFunction::from_fn(&m, |p| 1.0 + p[0]).unwrap();
        let q2 = orthonormalize(&[one, shifted]).unwrap();
        let c: f64 = q2.iter().map(|b| b.inner(&x).unwrap().powi(2)).sum();
        assert_abs_diff_eq!(c, nx * nx, epsilon = 1e-8);
    }

    #[test]
    fn orthonormal_pair_unchanged() {
        let m = grid(201);
        let one = GridFunction::constant(&m, 1.0).unwrap();
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        let x = x.scale(1.0 / x.lp_norm(Lp::L2));
        let q = orthonormalize(&[one.clone(), x.clone()]).unwrap();
        for (a, b) in q[1].values().iter().zip(x.values()) {
            assert_abs_diff_eq!(a.abs(), b.abs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn dependent_column_reported() {
        let m = grid(50);
        let one = GridFunction::constant(&m, 1.0).unwrap();
        let two = GridFunction::constant(&m, 2.0).unwrap();
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        match orthonormalize(&[one.clone(), x.clone(), two.clone()]) {
            Err(Error::RankDeficient { index }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        let (q, dropped) = orthonormalize_dropping(&[one, two, x]).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(dropped, vec![1]);
    }

    #[test]
    fn holder_modulus_values() {
        let w = Modulus::holder(1.0, 1.0).unwrap();
        assert_eq!(w.eval(0.0).unwrap(), 0.0);
        let w = Modulus::holder(2.0, 0.5).unwrap();
        assert_abs_diff_eq!(w.eval(0.25).unwrap(), 1.0, epsilon = 1e-15);
        assert!(w.eval(2.5).is_err());
        assert!(w.eval(-0.1).is_err());
        assert!(Modulus::holder(1.0, 1.5).is_err());
    }

    #[test]
    fn tabulated_rejects_convex() {
        assert!(Modulus::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 0.1, 1.0]).is_err());
        let w = Modulus::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.5]).unwrap();
        assert_abs_diff_eq!(w.eval(0.5).unwrap(), 0.5);
        assert_abs_diff_eq!(w.eval(1.5).unwrap(), 1.25);
    }

    #[test]
    fn majorant_within_twice_raw() {
        // |x| has raw increments min(z, ...) and a wiggly function gives a
        // nonconcave raw table.
        let m = 401;
        let samples: Vec<f64> = (0..m)
            .map(|j| {
                let x = -1.0 + 2.0 * j as f64 / (m - 1) as f64;
                x.abs().sqrt() + 0.3 * (7.0 * x).sin()
            })
            .collect();
        let (w, raw) = Modulus::from_samples(&samples).unwrap();
        for (j, r) in raw.iter().enumerate() {
            let z = 2.0 * j as f64 / (m - 1) as f64;
            let v = w.eval(z).unwrap();
            assert!(v >= r - 1e-12);
            assert!(v <= 2.0 * r + 1e-12, "z={z} hull={v} raw={r}");
        }
    }

    #[test]
    fn transport_trivial_cases() {
        let m = grid(101);
        let zero = GridFunction::constant(&m, 0.0).unwrap();
        let r = concave_transport_check(&Modulus::linear(), &zero, Lp::L2).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let h = GridFunction::from_fn(&m, |p| p[0] * 0.7).unwrap();
        let r = concave_transport_check(&Modulus::linear(), &h, Lp::L2).unwrap();
        assert_abs_diff_eq!(r.lhs, h.lp_norm(Lp::L2), epsilon = 1e-14);
        assert_abs_diff_eq!(r.rhs, std::f64::consts::SQRT_2 * r.lhs, epsilon = 1e-14);
        assert!(r.holds);
    }

    #[test]
    fn lopt_examples() {
        let r = lopt_optimize(1.0, 1.0, 1.0, 10).unwrap();
        assert_eq!(r.d_star, 1);
        assert_abs_diff_eq!(r.value, 2.0);
        assert_abs_diff_eq!(r.paper_bound, 3.0);
        let r = lopt_optimize(8.0, 1.0, 1.0, 10).unwrap();
        assert_eq!(r.d_star, 3);
        assert_abs_diff_eq!(r.value, 8.0 / 3.0 + 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.paper_bound, 3.0 * 8f64.sqrt(), epsilon = 1e-12);
        assert!(lopt_optimize(1.0, 1.0, 1.0, 0).is_err());
        let r = lopt_optimize(5.0, 5.0, 2.0, 100).unwrap();
        assert!(r.value <= 15.0);
    }
}
