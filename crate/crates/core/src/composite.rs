//! Composite models `{f∘t : f ∈ F}`, the composition error bound, critical
//! net indices and the smoothness calculus for rate exponents.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::approx::{tensor_legendre_columns, Cell, CellIndex, DyadicPartition, Interval, PolySpace};
use crate::error::{domain, structure, Error, Result};
use crate::function::{DesignMeasure, GridFunction, Lp, Modulus};
use crate::model::{Block, LinearModel};

/// Outer space `F` on `[-1,1]^l`: piecewise polynomials on a cell list.
/// Only the cells and degree matter once composed, since the composed span
/// does not depend on the basis chosen for `F`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterSpace {
    pub id: String,
    pub dim: usize,
    pub cells: Vec<Cell>,
    pub degree: usize,
    /// `Δ_γ(F)`.
    pub delta_gamma: f64,
}

impl OuterSpace {
    pub fn from_partition(partition: &DyadicPartition, degree: usize, delta_gamma: f64) -> OuterSpace {
        OuterSpace {
            id: format!("pp{degree}{}", partition.label()),
            dim: partition.dim(),
            cells: partition.cells().to_vec(),
            degree,
            delta_gamma,
        }
    }

    pub fn from_poly_space(space: &PolySpace) -> OuterSpace {
        OuterSpace::from_partition(&space.partition, space.degree, space.delta())
    }

    /// Piecewise constants on the `D^l` equal cubes of `[-1,1]^l`.
    pub fn cube_grid(l: usize, d: u32, delta_gamma: f64) -> OuterSpace {
        let total = (d as usize).pow(l as u32);
        let cells = (0..total)
            .map(|mut flat| {
                let axes = (0..l)
                    .map(|_| {
                        let idx = (flat % d as usize) as u32;
                        flat /= d as usize;
                        Interval { den: d, idx }
                    })
                    .collect();
                Cell { axes }
            })
            .collect();
        OuterSpace { id: format!("cube{l}x{d}"), dim: l, cells, degree: 0, delta_gamma }
    }

    /// `𝒟(F) = |cells| (r+1)^l`.
    pub fn charged_dim(&self) -> usize {
        self.cells.len() * (self.degree + 1).pow(self.dim as u32)
    }

    pub fn with_delta(mut self, delta_gamma: f64) -> OuterSpace {
        self.delta_gamma = delta_gamma;
        self
    }
}

/// One member `t = (t_1..t_l)` of a product net with its penalty terms.
#[derive(Debug, Clone)]
pub struct InnerMember {
    pub id: String,
    pub values: Vec<GridFunction>,
    /// `Δ_λ(𝐓)`.
    pub delta_lambda: f64,
    /// `log|𝐓|` bound.
    pub log_card_bound: f64,
    /// `Δ_ν(ℓ)` from stream mixing.
    pub delta_nu: f64,
}

impl InnerMember {
    /// A fixed inner function with no penalty of its own.
    pub fn fixed(id: impl Into<String>, values: Vec<GridFunction>) -> InnerMember {
        InnerMember { id: id.into(), values, delta_lambda: 0.0, log_card_bound: 0.0, delta_nu: 0.0 }
    }
}

/// A composed model with its penalty breakdown.
#[derive(Debug, Clone)]
pub struct CompositeModel {
    pub model: LinearModel,
    pub outer_id: String,
    pub inner_id: String,
    pub delta_gamma: f64,
    pub delta_lambda: f64,
    pub log_card_bound: f64,
    pub delta_nu: f64,
}

impl CompositeModel {
    /// `Δ_γ(F) + Δ_λ(𝐓) + log|𝐓| bound + Δ_ν`.
    pub fn delta_pi(&self) -> f64 {
        self.delta_gamma + self.delta_lambda + self.log_card_bound + self.delta_nu
    }

    pub fn realized_dim(&self) -> usize {
        self.model.dim()
    }

    /// Basis functions of `F` lost on the design.
    pub fn dropped(&self) -> usize {
        self.model.dropped()
    }
}

/// Composition state for one inner member: the points `t(x_i)` with their
/// cell lookup, and composed blocks cached per outer cell.
pub struct Composer {
    measure: Arc<DesignMeasure>,
    inner: InnerMember,
    index: CellIndex,
    blocks: HashMap<(Cell, usize), (Option<Arc<Block>>, usize)>,
}

impl Composer {
    pub fn new(measure: Arc<DesignMeasure>, inner: InnerMember) -> Result<Composer> {
        if inner.values.is_empty() {
            return structure("inner member has no coordinates");
        }
        let n = measure.len();
        let l = inner.values.len();
        let mut points = vec![0.0; n * l];
        for (j, t) in inner.values.iter().enumerate() {
            if t.values().len() != n || !t.measure().same_as(&measure) {
                return structure("inner function lives on a different measure");
            }
            for (i, &v) in t.values().iter().enumerate() {
                if !(-1.0..=1.0).contains(&v) {
                    return domain(format!("inner value {v} outside [-1,1]"));
                }
                points[i * l + j] = v;
            }
        }
        Ok(Composer { measure, inner, index: CellIndex::new(l, points), blocks: HashMap::new() })
    }

    pub fn inner(&self) -> &InnerMember {
        &self.inner
    }

    fn block(&mut self, cell: &Cell, degree: usize) -> (Option<Arc<Block>>, usize) {
        let key = (cell.clone(), degree);
        if let Some(b) = self.blocks.get(&key) {
            return b.clone();
        }
        let nodes = self.index.nodes(cell);
        let built = if degree == 0 {
            let b = Block::indicator(&self.measure, nodes.to_vec());
            let lost = usize::from(b.is_none());
            (b.map(Arc::new), lost)
        } else {
            let cols = tensor_legendre_columns(cell, degree, nodes.iter().map(|&i| self.index.point(i)));
            let (b, lost) = Block::from_columns(&self.measure, nodes.to_vec(), cols);
            (b.map(Arc::new), lost)
        };
        self.blocks.insert(key, built.clone());
        built
    }

    pub fn compose(&mut self, outer: &OuterSpace) -> Result<CompositeModel> {
        if outer.dim != self.inner.values.len() {
            return structure(format!("outer space on {} axes, inner member has {}", outer.dim, self.inner.values.len()));
        }
        let mut blocks = Vec::new();
        let mut dropped = 0;
        for cell in &outer.cells {
            let (b, lost) = self.block(cell, outer.degree);
            dropped += lost;
            blocks.extend(b);
        }
        let delta = outer.delta_gamma + self.inner.delta_lambda + self.inner.log_card_bound + self.inner.delta_nu;
        let id = format!("{}|{}", outer.id, self.inner.id);
        let mut model = LinearModel::from_blocks(id, self.measure.clone(), blocks, outer.charged_dim(), delta);
        model.set_dropped(dropped);
        Ok(CompositeModel {
            model,
            outer_id: outer.id.clone(),
            inner_id: self.inner.id.clone(),
            delta_gamma: outer.delta_gamma,
            delta_lambda: self.inner.delta_lambda,
            log_card_bound: self.inner.log_card_bound,
            delta_nu: self.inner.delta_nu,
        })
    }

    /// Drops cached blocks (the point index is kept).
    pub fn clear(&mut self) {
        self.blocks.clear();
    }
}

pub fn compose_model(outer: &OuterSpace, inner: &InnerMember, measure: &Arc<DesignMeasure>) -> Result<CompositeModel> {
    Composer::new(measure.clone(), inner.clone())?.compose(outer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub bound: f64,
    pub measured_gap: f64,
    /// Sup of `|g - f|` over the check grid and the points `t(x)`.
    pub sup_distance: f64,
    pub holds: bool,
}

/// Checks `‖g∘u - f∘t‖_p ≤ d_∞(g,f) + 2^{1/p} Σ_j w_j(‖u_j - t_j‖_p)`.
///
/// `d_∞` is a max over a tensor grid of `grid_per_axis` points per axis
/// together with every point `t(x_i)`; the inequality already holds with
/// the sup restricted to those points.
pub fn composition_gap_bound(
    g: &dyn Fn(&[f64]) -> f64,
    f: &dyn Fn(&[f64]) -> f64,
    u: &[GridFunction],
    t: &[GridFunction],
    w: &[Modulus],
    p: Lp,
    grid_per_axis: usize,
) -> Result<GapReport> {
    let l = u.len();
    if l == 0 || t.len() != l || w.len() != l {
        return structure("u, t and moduli need one entry per outer coordinate");
    }
    let n = u[0].values().len();
    let measure = u[0].measure().clone();
    let mut y_u = vec![0.0; l];
    let mut y_t = vec![0.0; l];
    let mut gap = Vec::with_capacity(n);
    let mut sup: f64 = 0.0;
    for i in 0..n {
        for j in 0..l {
            y_u[j] = u[j].values()[i];
            y_t[j] = t[j].values()[i];
        }
        let ft = f(&y_t);
        gap.push(g(&y_u) - ft);
        sup = sup.max((g(&y_t) - ft).abs());
    }
    let per = grid_per_axis.max(2);
    let mut y = vec![0.0; l];
    for flat in 0..per.pow(l as u32) {
        let mut rest = flat;
        for v in y.iter_mut() {
            *v = -1.0 + 2.0 * (rest % per) as f64 / (per - 1) as f64;
            rest /= per;
        }
        sup = sup.max((g(&y) - f(&y)).abs());
    }
    let measured_gap = GridFunction::new(measure, gap)?.lp_norm(p);
    let mut transported = 0.0;
    for j in 0..l {
        transported += w[j].eval(u[j].distance(&t[j], p)?)?;
    }
    let bound = sup + p.two_root() * transported;
    Ok(GapReport { bound, measured_gap, sup_distance: sup, holds: measured_gap <= bound + 1e-9 })
}

/// Default cap on the critical-index scan.
pub const INDEX_CAP: u32 = 200;

/// Smallest `i ≥ 1` with `l w²(e^{-i}) ≤ τ i D`; 1 when `D = 0`.
pub fn critical_index(w: &Modulus, l: usize, tau: f64, dim: usize, cap: u32) -> Result<u32> {
    if !(tau > 0.0) {
        return domain("tau must be positive");
    }
    if dim == 0 {
        return Ok(1);
    }
    for i in 1..=cap {
        let wi = w.eval((-(i as f64)).exp())?;
        if l as f64 * wi * wi <= tau * i as f64 * dim as f64 {
            return Ok(i);
        }
    }
    Err(Error::Modulus(format!("no critical index below the cap {cap}")))
}

/// `[α^{-1} log(l L² / (τ D))] ∨ 1`.
pub fn holder_index_bound(alpha: f64, lipschitz: f64, l: usize, tau: f64, dim: usize) -> Result<f64> {
    if dim < 1 {
        return domain("dimension must be at least 1");
    }
    if !(alpha > 0.0 && lipschitz > 0.0 && tau > 0.0) {
        return domain("alpha, L and tau must be positive");
    }
    Ok(((l as f64 * lipschitz * lipschitz / (tau * dim as f64)).ln() / alpha).max(1.0))
}

/// `xy` when `x ∨ y ≤ 1`, else `x ∧ y`.
pub fn phi(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return domain("phi takes positive arguments");
    }
    Ok(if x.max(y) <= 1.0 { x * y } else { x.min(y) })
}

pub fn harmonic_mean(values: &[f64]) -> f64 {
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessComparison {
    pub theta: Vec<f64>,
    pub theta_bar: f64,
    /// `β̄ (α ∧ 1)`.
    pub beta_bar_times_min: f64,
    /// `max_i β_i ≤ α ∨ 1`, in which case the two agree.
    pub equality: bool,
}

pub fn smoothness_compare(alpha: f64, beta: &[f64]) -> Result<SmoothnessComparison> {
    if beta.is_empty() {
        return domain("beta must be nonempty");
    }
    let theta = beta.iter().map(|&b| phi(b, alpha)).collect::<Result<Vec<_>>>()?;
    let theta_bar = harmonic_mean(&theta);
    let beta_bar_times_min = harmonic_mean(beta) * alpha.min(1.0);
    let equality = beta.iter().fold(0.0f64, |m, &b| m.max(b)) <= alpha.max(1.0);
    Ok(SmoothnessComparison { theta, theta_bar, beta_bar_times_min, equality })
}

/// Smoothness of a composite `g∘u`: per-coordinate outer smoothness and
/// per-inner-function smoothness vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub outer_constant: f64,
    pub inner_constants: Vec<f64>,
}

impl SmoothnessSpec {
    pub fn new(alpha: Vec<f64>, beta: Vec<Vec<f64>>, outer_constant: f64, inner_constants: Vec<f64>) -> Result<Self> {
        let l = alpha.len();
        if l == 0 || beta.len() != l || inner_constants.len() != l {
            return structure("alpha, beta and inner constants need one entry per outer coordinate");
        }
        let k = beta[0].len();
        if k == 0 || beta.iter().any(|b| b.len() != k) {
            return structure("every inner smoothness vector needs k entries");
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !alpha.iter().all(positive)
            || !beta.iter().flatten().all(positive)
            || !positive(&outer_constant)
            || !inner_constants.iter().all(positive)
        {
            return domain("smoothness entries and constants must be positive");
        }
        Ok(SmoothnessSpec { alpha, beta, outer_constant, inner_constants })
    }

    pub fn l(&self) -> usize {
        self.alpha.len()
    }

    pub fn k(&self) -> usize {
        self.beta[0].len()
    }

    pub fn alpha_bar(&self) -> f64 {
        harmonic_mean(&self.alpha)
    }

    pub fn beta_bar(&self, j: usize) -> f64 {
        harmonic_mean(&self.beta[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CompositeSmooth(usize),
    OuterOnly,
    Additive(usize),
    PlainHolder,
}

pub fn rate_exponent(spec: &SmoothnessSpec, scenario: Scenario) -> Result<f64> {
    let ratio = |s: f64, d: f64| 2.0 * s / (2.0 * s + d);
    match scenario {
        Scenario::CompositeSmooth(j) => {
            if j >= spec.l() {
                return domain(format!("inner index {j} out of range"));
            }
            Ok(ratio(spec.beta_bar(j) * spec.alpha[j].min(1.0), spec.k() as f64))
        }
        Scenario::OuterOnly => Ok(ratio(spec.alpha_bar(), spec.l() as f64)),
        Scenario::Additive(j) => {
            if j >= spec.k() {
                return domain(format!("additive component {j} out of range"));
            }
            Ok(ratio(spec.alpha[0].min(1.0) * spec.beta[0][j], 1.0))
        }
        Scenario::PlainHolder => {
            if spec.l() != 1 {
                return domain("plain Hölder comparison needs a single inner function");
            }
            let cmp = smoothness_compare(spec.alpha[0], &spec.beta[0])?;
            Ok(ratio(cmp.theta_bar, spec.k() as f64))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Arc<DesignMeasure> {
        Arc::new(DesignMeasure::linspace(n).unwrap())
    }

    #[test]
    fn constants_compose_to_constants() {
        let m = grid(41);
        let t = GridFunction::from_fn(&m, |x| (3.0 * x[0]).sin()).unwrap();
        let c = compose_model(&OuterSpace::from_partition(&DyadicPartition::root(1), 0, 0.0), &InnerMember::fixed("t", vec![t]), &m)
            .unwrap();
        assert_eq!(c.realized_dim(), 1);
        c.model.check_orthonormal().unwrap();
    }

    #[test]
    fn identity_inner_gives_linear_span() {
        let m = grid(41);
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        let c = compose_model(&OuterSpace::from_partition(&DyadicPartition::root(1), 1, 0.0), &InnerMember::fixed("id", vec![x.clone()]), &m)
            .unwrap();
        assert_eq!(c.realized_dim(), 2);
        let p = c.model.project(&x).unwrap();
        assert!(p.distance(&x, Lp::Inf).unwrap() < 1e-12);
    }

    #[test]
    fn square_inner_loses_a_cell() {
        let m = grid(41);
        let sq = GridFunction::from_fn(&m, |p| p[0] * p[0]).unwrap();
        let outer = OuterSpace::from_partition(&DyadicPartition::regular(&[1]), 0, 0.0);
        let c = compose_model(&outer, &InnerMember::fixed("sq", vec![sq]), &m).unwrap();
        assert_eq!(c.realized_dim(), 1);
        assert_eq!(c.dropped(), 1);
        assert_eq!(c.model.charged_dim(), 2);
    }

    #[test]
    fn out_of_range_inner_rejected() {
        let m = grid(11);
        let t = GridFunction::from_fn(&m, |p| 2.0 * p[0]).unwrap();
        assert!(Composer::new(m, InnerMember::fixed("t", vec![t])).is_err());
    }

    #[test]
    fn delta_assembly() {
        let m = grid(11);
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        let inner = InnerMember { id: "x".into(), values: vec![x], delta_lambda: 1.5, log_card_bound: 2.25, delta_nu: 0.5 };
        let outer = OuterSpace::from_partition(&DyadicPartition::root(1), 0, 3.0);
        let c = compose_model(&outer, &inner, &m).unwrap();
        assert_abs_diff_eq!(c.delta_pi(), 7.25);
        assert_abs_diff_eq!(c.model.delta(), 7.25);
    }

    #[test]
    fn linear_gap_is_tight() {
        let m = grid(101);
        let u = GridFunction::from_fn(&m, |p| 0.5 * p[0]).unwrap();
        let t = GridFunction::from_fn(&m, |p| 0.5 * p[0] + 0.1).unwrap();
        let id = |y: &[f64]| y[0];
        let r = composition_gap_bound(&id, &id, &[u.clone()], &[t.clone()], &[Modulus::linear()], Lp::Inf, 11).unwrap();
        assert_abs_diff_eq!(r.measured_gap, r.bound, epsilon = 1e-12);
        let r = composition_gap_bound(&id, &id, &[u], &[t], &[Modulus::linear()], Lp::L2, 11).unwrap();
        assert!(r.holds);
        assert_abs_diff_eq!(r.bound, std::f64::consts::SQRT_2 * r.measured_gap, epsilon = 1e-12);
    }

    #[test]
    fn critical_index_examples() {
        let w = Modulus::holder(1.0, 1.0).unwrap();
        assert_eq!(critical_index(&w, 1, 0.01, 0, INDEX_CAP).unwrap(), 1);
        assert_eq!(critical_index(&w, 1, 0.01, 1, INDEX_CAP).unwrap(), 2);
        let w = Modulus::holder(10.0, 0.5).unwrap();
        assert_eq!(critical_index(&w, 1, 1e-4, 2, INDEX_CAP).unwrap(), 11);
        assert!(critical_index(&w, 1, 1e-4, 2, 5).is_err());
    }

    #[test]
    fn holder_bound_examples() {
        assert_abs_diff_eq!(holder_index_bound(1.0, 1.0, 1, 0.01, 1).unwrap(), 100f64.ln(), epsilon = 1e-12);
        assert_eq!(holder_index_bound(0.5, 1.0, 2, 2.0, 1).unwrap(), 1.0);
        assert!(holder_index_bound(1.0, 1.0, 1, 0.01, 0).is_err());
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.5, 0.5).unwrap(), 0.25);
        assert_eq!(phi(2.0, 3.0).unwrap(), 2.0);
        assert_eq!(phi(1.0, 1.0).unwrap(), 1.0);
        assert!(phi(0.0, 1.0).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let c = smoothness_compare(1.0, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c.theta_bar, 1.0);
        assert!(c.equality);
        let c = smoothness_compare(1.0, &[2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(c.theta_bar, 1.0);
        assert_abs_diff_eq!(c.beta_bar_times_min, 2.0);
        assert!(!c.equality);
        let c = smoothness_compare(2.0, &[1.0, 3.0]).unwrap();
        assert_eq!(c.theta, vec![1.0, 2.0]);
        assert_abs_diff_eq!(c.theta_bar, 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.beta_bar_times_min, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn rate_examples() {
        let k = 3;
        let spec = SmoothnessSpec::new(vec![1.0], vec![vec![k as f64; k]], 1.0, vec![1.0]).unwrap();
        assert_abs_diff_eq!(rate_exponent(&spec, Scenario::CompositeSmooth(0)).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rate_exponent(&spec, Scenario::OuterOnly).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        let spec = SmoothnessSpec::new(vec![1.0], vec![vec![1.0, 1.0]], 1.0, vec![1.0]).unwrap();
        assert_abs_diff_eq!(rate_exponent(&spec, Scenario::PlainHolder).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rate_exponent(&spec, Scenario::Additive(1)).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cube_grid_dimensions() {
        let f = OuterSpace::cube_grid(1, 2, 2.0);
        assert_eq!(f.charged_dim(), 2);
        let f = OuterSpace::cube_grid(2, 3, 3.0);
        assert_eq!(f.cells.len(), 9);
        let m = Arc::new(DesignMeasure::lebesgue(2).unwrap());
        let a = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        let b = GridFunction::from_fn(&m, |p| p[1]).unwrap();
        let c = compose_model(&f, &InnerMember::fixed("xy", vec![a, b]), &m).unwrap();
        assert_eq!(c.realized_dim(), 9);
        c.model.check_orthonormal().unwrap();
    }
}
