//! η-nets of clamped models in orthonormal coefficient space, and product
//! nets over several inner coordinates.
//!
//! Ball nets are scaled root lattices (`Z`, `D_n`, `E_8`) whose covering
//! radius is below η while the minimum distance stays above η, so they are
//! η-separated and cover the ball exactly. Members are the lattice points
//! in the ball of radius `2 + ρ`, with `ρ` the lattice covering radius, so
//! every point of the radius-2 ball has a member within `ρ < η`.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{domain, structure, Error, Result};
use crate::function::{DesignMeasure, GridFunction, Lp};
use crate::model::LinearModel;

/// Radius of the coefficient ball that clamping keeps.
pub const BALL_RADIUS: f64 = 2.0;
/// Largest model dimension for which nets are built.
pub const MAX_NET_DIM: usize = 8;
/// Default cap on net and product-net cardinality.
pub const NET_CAP: usize = 1_000_000;
/// Slack used when checking covering and approximation inequalities.
pub const NET_SLACK: f64 = 1e-9;

/// Orthonormal basis values, row-major `n × dim`.
#[derive(Debug, Clone)]
pub struct DenseBasis {
    n: usize,
    dim: usize,
    values: Vec<f64>,
}

impl DenseBasis {
    pub fn from_model(model: &LinearModel) -> DenseBasis {
        let n = model.measure().len();
        let cols = model.basis_functions();
        let dim = cols.len();
        let mut values = vec![0.0; n * dim];
        for (c, f) in cols.iter().enumerate() {
            for (i, v) in f.values().iter().enumerate() {
                values[i * dim + c] = *v;
            }
        }
        DenseBasis { n, dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `Σ_m c_m q_m` into `out`.
    pub fn combine_into(&self, coef: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let row = &self.values[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(coef).map(|(b, c)| b * c).sum();
        }
    }

    /// Coefficients `<v, q_m>` under the weights.
    pub fn coefficients(&self, v: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for i in 0..self.n {
            let row = &self.values[i * self.dim..(i + 1) * self.dim];
            let wv = weights[i] * v[i];
            c.iter_mut().zip(row).for_each(|(c, b)| *c += b * wv);
        }
        c
    }
}

pub type Membership = Arc<dyn Fn(&[f64], f64) -> bool + Send + Sync>;
pub type Sampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// The set a net discretizes, in coefficient space.
#[derive(Clone)]
pub enum Region {
    /// `{t}`, clamped to `[-1,1]`.
    Singleton(GridFunction),
    /// Coefficient ball of the given radius.
    Ball { radius: f64 },
    /// Body inside a ball of the given radius around 0, given by a test
    /// `near(c, slack)` that must accept every `c` within `slack` of the
    /// body (it may accept more). Members are the lattice points it accepts
    /// at the lattice covering radius.
    Body { near: Membership, bounding_radius: f64 },
    /// Set known only through a sampler; netted by farthest-point packing
    /// over a seeded sample cloud.
    Sampled { sample: Sampler, cloud: usize },
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::Singleton(_) => write!(f, "Singleton"),
            Region::Ball { radius } => write!(f, "Ball({radius})"),
            Region::Body { bounding_radius, .. } => write!(f, "Body(<= {bounding_radius})"),
            Region::Sampled { cloud, .. } => write!(f, "Sampled({cloud})"),
        }
    }
}

/// A model restricted to a bounded region of its coefficient space.
#[derive(Debug, Clone)]
pub struct ClampedModel {
    id: String,
    measure: Arc<DesignMeasure>,
    basis: Arc<DenseBasis>,
    region: Region,
}

/// Restricts an orthonormal model to its radius-2 coefficient ball.
pub fn clamp_model(model: &LinearModel) -> Result<ClampedModel> {
    model.check_orthonormal()?;
    if model.dim() == 0 {
        let zero = GridFunction::constant(model.measure(), 0.0)?;
        return Ok(ClampedModel::singleton(model.id(), zero));
    }
    Ok(ClampedModel {
        id: model.id().to_string(),
        measure: model.measure().clone(),
        basis: Arc::new(DenseBasis::from_model(model)),
        region: Region::Ball { radius: BALL_RADIUS },
    })
}

impl ClampedModel {
    pub fn singleton(id: impl Into<String>, t: GridFunction) -> ClampedModel {
        let n = t.measure().len();
        ClampedModel {
            id: id.into(),
            measure: t.measure().clone(),
            basis: Arc::new(DenseBasis { n, dim: 0, values: Vec::new() }),
            region: Region::Singleton(t),
        }
    }

    /// Subset of an orthonormal model described by a membership test on
    /// coefficient vectors.
    pub fn body(model: &LinearModel, near: Membership, bounding_radius: f64) -> Result<ClampedModel> {
        model.check_orthonormal()?;
        Ok(ClampedModel {
            id: model.id().to_string(),
            measure: model.measure().clone(),
            basis: Arc::new(DenseBasis::from_model(model)),
            region: Region::Body { near, bounding_radius },
        })
    }

    /// Subset of an orthonormal model described by a coefficient sampler.
    pub fn sampled(model: &LinearModel, sample: Sampler, cloud: usize) -> Result<ClampedModel> {
        model.check_orthonormal()?;
        Ok(ClampedModel {
            id: model.id().to_string(),
            measure: model.measure().clone(),
            basis: Arc::new(DenseBasis::from_model(model)),
            region: Region::Sampled { sample, cloud },
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.basis.dim
    }

    pub fn measure(&self) -> &Arc<DesignMeasure> {
        &self.measure
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn basis(&self) -> &Arc<DenseBasis> {
        &self.basis
    }

    /// The clamped function with the given coefficients.
    pub fn function(&self, coef: &[f64]) -> GridFunction {
        let mut values = vec![0.0; self.measure.len()];
        self.basis.combine_into(coef, &mut values);
        values.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        GridFunction::new(self.measure.clone(), values).expect("finite combination")
    }

    /// `inf_{t ∈ T} d(t, v)` for singleton and ball regions.
    pub fn distance_to(&self, v: &GridFunction) -> Result<f64> {
        match &self.region {
            Region::Singleton(t) => t.distance(v, Lp::L2),
            Region::Ball { radius } => {
                let c = self.basis.coefficients(v.values(), self.measure.weights());
                let norm_c = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mut fitted = vec![0.0; v.values().len()];
                self.basis.combine_into(&c, &mut fitted);
                let residual: f64 = fitted
                    .iter()
                    .zip(v.values())
                    .zip(self.measure.weights())
                    .map(|((a, b), w)| w * (a - b) * (a - b))
                    .sum();
                let outside = (norm_c - radius).max(0.0);
                Ok((residual + outside * outside).sqrt())
            }
            _ => domain("model distance is only available for singleton and ball regions"),
        }
    }
}

/// Root lattice used for a given dimension and its covering-to-packing
/// ratio (covering radius over minimum distance).
#[derive(Debug, Clone, Copy, PartialEq)]
struct LatticeSpec {
    /// Minimum distance of the unscaled lattice.
    min_dist: f64,
    /// Covering radius over minimum distance.
    ratio: f64,
    /// Coordinates are all integers (`false`) or also the half-integer coset.
    with_half_coset: bool,
    /// Coordinate sum must be even.
    even_sum: bool,
}

fn lattice_spec(dim: usize) -> LatticeSpec {
    let sqrt2 = std::f64::consts::SQRT_2;
    match dim {
        1 => LatticeSpec { min_dist: 1.0, ratio: 0.5, with_half_coset: false, even_sum: false },
        8 => LatticeSpec { min_dist: sqrt2, ratio: 1.0 / sqrt2, with_half_coset: true, even_sum: true },
        n => {
            let covering = 1.0f64.max((n as f64).sqrt() / 2.0);
            LatticeSpec { min_dist: sqrt2, ratio: covering / sqrt2, with_half_coset: false, even_sum: true }
        }
    }
}

/// Calls `visit` on every lattice vector (unscaled) of norm at most `radius`.
/// Works on doubled coordinates so both cosets are integer vectors.
fn enumerate_lattice(dim: usize, spec: LatticeSpec, radius: f64, visit: &mut dyn FnMut(&[f64]) -> Result<()>) -> Result<()> {
    let limit = 4.0 * radius * radius * (1.0 + 1e-12);
    let mut doubled = vec![0i64; dim];
    let mut point = vec![0.0; dim];
    #[allow(clippy::too_many_arguments)]
    fn rec(
        j: usize,
        odd: bool,
        spec: LatticeSpec,
        budget: f64,
        doubled: &mut [i64],
        point: &mut [f64],
        visit: &mut dyn FnMut(&[f64]) -> Result<()>,
    ) -> Result<()> {
        let dim = doubled.len();
        if j == dim {
            if spec.even_sum && doubled.iter().sum::<i64>().rem_euclid(4) != 0 {
                return Ok(());
            }
            return visit(point);
        }
        let bound = budget.max(0.0).sqrt().floor() as i64;
        let mut u = -bound;
        if (u.rem_euclid(2) == 1) != odd {
            u += 1;
        }
        while u <= bound {
            let sq = (u * u) as f64;
            if sq <= budget {
                doubled[j] = u;
                point[j] = u as f64 / 2.0;
                rec(j + 1, odd, spec, budget - sq, doubled, point, visit)?;
            }
            u += 2;
        }
        Ok(())
    }
    rec(0, false, spec, limit, &mut doubled, &mut point, visit)?;
    if spec.with_half_coset {
        rec(0, true, spec, limit, &mut doubled, &mut point, visit)?;
    }
    Ok(())
}

/// Points of a randomly rotated lattice with spacing above `eta` and
/// covering radius below `eta`, restricted to the ball of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePoints {
    pub dim: usize,
    /// Flat, `dim` coordinates per point.
    pub points: Vec<f64>,
    pub spacing: f64,
    pub covering: f64,
}

impl LatticePoints {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn lattice_points(dim: usize, eta: f64, radius: f64, seed: u64, cap: usize) -> Result<LatticePoints> {
    if dim == 0 || dim > MAX_NET_DIM {
        return domain(format!("lattice dimension {dim} outside 1..={MAX_NET_DIM}"));
    }
    if !(eta > 0.0 && radius >= 0.0) {
        return domain("lattice spacing and radius must be positive");
    }
    let spec = lattice_spec(dim);
    let spacing = eta / spec.ratio * (1.0 - 1e-9);
    let covering = spec.ratio * spacing;
    let scale = spacing / spec.min_dist;
    let rotation = random_rotation(dim, seed);
    let mut points = Vec::new();
    let mut image = vec![0.0; dim];
    enumerate_lattice(dim, spec, radius / scale, &mut |z| {
        for (r, out) in image.iter_mut().enumerate() {
            let row = &rotation[r * dim..(r + 1) * dim];
            *out = scale * row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
        if points.len() / dim >= cap {
            return Err(Error::Budget { what: "lattice size".into(), value: (points.len() / dim + 1) as f64, cap: cap as f64 });
        }
        points.extend_from_slice(&image);
        Ok(())
    })?;
    Ok(LatticePoints { dim, points, spacing, covering })
}

/// Seeded random rotation, row-major.
fn random_rotation(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, r)| *x -= d * r);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NetConstruction {
    Singleton,
    Lattice,
    FarthestPoint,
}

/// A finite η-separated set of clamped members of a model.
#[derive(Debug, Clone)]
pub struct ClampNet {
    source: ClampedModel,
    eta: f64,
    /// Flat `len × dim` pre-clamp coefficient vectors.
    coefficients: Vec<f64>,
    len: usize,
    separation: f64,
    covering_radius: f64,
    construction: NetConstruction,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetSidecar {
    pub source: String,
    pub eta: f64,
    pub dimension: usize,
    pub cardinality: usize,
    pub bound: f64,
    pub separation: f64,
    pub covering_radius: f64,
    pub construction: NetConstruction,
}

pub fn build_eta_net(model: &ClampedModel, eta: f64, sampler_seed: u64) -> Result<ClampNet> {
    build_eta_net_capped(model, eta, sampler_seed, NET_CAP)
}

pub fn build_eta_net_capped(model: &ClampedModel, eta: f64, sampler_seed: u64, cap: usize) -> Result<ClampNet> {
    if !(eta > 0.0 && eta <= 1.0) {
        return domain(format!("net resolution {eta} outside (0,1]"));
    }
    let dim = model.dim();
    if dim > MAX_NET_DIM {
        return domain(format!("model dimension {dim} above the net guard {MAX_NET_DIM}"));
    }
    let single = |construction| ClampNet {
        source: model.clone(),
        eta,
        coefficients: vec![0.0; dim],
        len: 1,
        separation: f64::INFINITY,
        covering_radius: 0.0,
        construction,
    };
    match &model.region {
        Region::Singleton(_) => Ok(single(NetConstruction::Singleton)),
        Region::Ball { radius } if *radius <= eta => {
            let mut net = single(NetConstruction::Lattice);
            net.covering_radius = *radius;
            Ok(net)
        }
        Region::Ball { radius } => lattice_net(model, eta, sampler_seed, cap, *radius, None),
        Region::Body { near, bounding_radius } => {
            lattice_net(model, eta, sampler_seed, cap, *bounding_radius, Some(near.clone()))
        }
        Region::Sampled { sample, cloud } => packing_net(model, eta, sampler_seed, cap, sample.clone(), *cloud),
    }
}

fn lattice_net(
    model: &ClampedModel,
    eta: f64,
    seed: u64,
    cap: usize,
    radius: f64,
    body: Option<Membership>,
) -> Result<ClampNet> {
    let dim = model.dim();
    let spec = lattice_spec(dim);
    // Largest spacing keeping the covering radius below η.
    let spacing = eta / spec.ratio * (1.0 - 1e-9);
    let covering = spec.ratio * spacing;
    let scale = spacing / spec.min_dist;
    let reach = radius + covering;
    let rotation = random_rotation(dim, seed);
    let mut coefficients = Vec::new();
    let mut len = 0usize;
    let mut image = vec![0.0; dim];
    enumerate_lattice(dim, spec, reach / scale, &mut |z| {
        for (r, out) in image.iter_mut().enumerate() {
            let row = &rotation[r * dim..(r + 1) * dim];
            *out = scale * row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(near) = &body {
            if !near(&image, covering) {
                return Ok(());
            }
        }
        len += 1;
        if len > cap {
            return Err(Error::Budget {
                what: format!("net size for {} at eta={eta}", model.id),
                value: (5.0 / eta).powi(dim as i32),
                cap: cap as f64,
            });
        }
        coefficients.extend_from_slice(&image);
        Ok(())
    })?;
    if len == 0 {
        return structure(format!("no lattice point near the body of {}", model.id));
    }
    let separation = if len <= 4000 { min_pairwise(&coefficients, dim) } else { spacing };
    Ok(ClampNet {
        source: model.clone(),
        eta,
        coefficients,
        len,
        separation,
        covering_radius: covering,
        construction: NetConstruction::Lattice,
    })
}

fn packing_net(model: &ClampedModel, eta: f64, seed: u64, cap: usize, sample: Sampler, cloud: usize) -> Result<ClampNet> {
    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..cloud.max(1)).map(|_| sample(&mut rng)).collect();
    if points.iter().any(|p| p.len() != dim) {
        return structure("sampler returned vectors of the wrong dimension");
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[0])).collect();
    let mut chosen = vec![0usize];
    let mut separation = f64::INFINITY;
    loop {
        let (far, d2) = nearest
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let d = d2.sqrt();
        if d <= eta {
            let coefficients = chosen.iter().flat_map(|&i| points[i].clone()).collect();
            return Ok(ClampNet {
                source: model.clone(),
                eta,
                coefficients,
                len: chosen.len(),
                separation,
                covering_radius: d,
                construction: NetConstruction::FarthestPoint,
            });
        }
        separation = separation.min(d);
        chosen.push(far);
        if chosen.len() > cap {
            return Err(Error::Budget {
                what: format!("net size for {} at eta={eta}", model.id),
                value: (5.0 / eta).powi(dim as i32),
                cap: cap as f64,
            });
        }
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &points[far]));
        }
    }
}

fn min_pairwise(coefficients: &[f64], dim: usize) -> f64 {
    let len = coefficients.len() / dim.max(1);
    let mut best = f64::INFINITY;
    for a in 0..len {
        for b in a + 1..len {
            let d: f64 = (0..dim).map(|m| (coefficients[a * dim + m] - coefficients[b * dim + m]).powi(2)).sum();
            best = best.min(d);
        }
    }
    best.sqrt()
}

impl ClampNet {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `𝒟` of the source model.
    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn source(&self) -> &ClampedModel {
        &self.source
    }

    /// Minimum pairwise distance of the pre-clamp members (the lattice
    /// minimum distance for large lattice nets).
    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// Certified covering radius of the region by the pre-clamp members;
    /// for packing nets, the covering radius of the sample cloud.
    pub fn covering_radius(&self) -> f64 {
        self.covering_radius
    }

    pub fn construction(&self) -> NetConstruction {
        self.construction
    }

    /// `(5/η)^𝒟`.
    pub fn bound(&self) -> f64 {
        (5.0 / self.eta).powi(self.dim() as i32)
    }

    pub fn coefficient(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coefficients[i * d..(i + 1) * d]
    }

    /// Clamped member values written into `out`.
    pub fn member_into(&self, i: usize, out: &mut [f64]) {
        match &self.source.region {
            Region::Singleton(t) => {
                out.iter_mut().zip(t.values()).for_each(|(o, v)| *o = v.clamp(-1.0, 1.0));
            }
            _ => {
                self.source.basis.combine_into(self.coefficient(i), out);
                out.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
            }
        }
    }

    pub fn member(&self, i: usize) -> GridFunction {
        let mut values = vec![0.0; self.source.measure.len()];
        self.member_into(i, &mut values);
        GridFunction::new(self.source.measure.clone(), values).expect("finite member")
    }

    /// Index and distance of the member nearest to `v`.
    pub fn nearest(&self, v: &GridFunction) -> Result<(usize, f64)> {
        let mut buf = vec![0.0; self.source.measure.len()];
        let w = self.source.measure.weights();
        if v.values().len() != buf.len() {
            return structure("target lives on a different measure");
        }
        let mut best = (0, f64::INFINITY);
        for i in 0..self.len {
            self.member_into(i, &mut buf);
            let d: f64 = buf.iter().zip(v.values()).zip(w).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok((best.0, best.1.sqrt()))
    }

    pub fn sidecar(&self) -> NetSidecar {
        NetSidecar {
            source: self.source.id.clone(),
            eta: self.eta,
            dimension: self.dim(),
            cardinality: self.len,
            bound: self.bound(),
            separation: self.separation,
            covering_radius: self.covering_radius,
            construction: self.construction,
        }
    }

    /// CSV rows `(member_index, c_0, ..., c_{D-1})`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["member_index".to_string()];
        header.extend((0..self.dim()).map(|m| format!("c{m}")));
        w.write_record(&header)?;
        for i in 0..self.len {
            let mut row = vec![i.to_string()];
            row.extend(self.coefficient(i).iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetApproxReport {
    pub net_dist: f64,
    pub model_dist: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `inf_{net} d(t,v) ≤ inf_T d(t,v) + (η ∧ 𝒟)`.
pub fn net_approx_check(net: &ClampNet, v: &GridFunction) -> Result<NetApproxReport> {
    if v.values().iter().any(|x| x.abs() > 1.0) {
        return domain("target must take values in [-1,1]");
    }
    let (_, net_dist) = net.nearest(v)?;
    let model_dist = net.source.distance_to(v)?;
    let allowance = net.eta.min(net.dim() as f64);
    Ok(NetApproxReport {
        net_dist,
        model_dist,
        slack: NET_SLACK,
        holds: net_dist <= model_dist + allowance + NET_SLACK,
    })
}

/// One inner coordinate of a product net.
#[derive(Debug, Clone)]
pub struct NetFactor {
    pub model: ClampedModel,
    pub delta_lambda: f64,
    pub index: u32,
}

/// Product of per-coordinate nets with its penalty accounting.
#[derive(Debug, Clone)]
pub struct ProductNet {
    pub factors: Vec<Arc<ClampNet>>,
    pub indices: Vec<u32>,
    /// `Σ_j [Δ_λj + i_j 𝒟_j]`.
    pub delta_lambda: f64,
    /// `Σ_j 𝒟_j (i_j + log 5)`.
    pub log_card_bound: f64,
    pub cardinality: usize,
}

pub fn log_card_bound(dims_and_indices: &[(usize, u32)]) -> f64 {
    dims_and_indices.iter().map(|&(d, i)| d as f64 * (i as f64 + 5f64.ln())).sum()
}

pub fn build_product_net(factors: &[NetFactor], seed: u64) -> Result<ProductNet> {
    let mut nets = Vec::with_capacity(factors.len());
    for (j, f) in factors.iter().enumerate() {
        if f.index < 1 {
            return domain("net indices start at 1");
        }
        let eta = (-(f.index as f64)).exp();
        nets.push(Arc::new(build_eta_net(&f.model, eta, seed.wrapping_add(j as u64))?));
    }
    let deltas: Vec<f64> = factors.iter().map(|f| f.delta_lambda).collect();
    product_of_nets(nets, &deltas)
}

/// Assembles a product net from already built per-coordinate nets.
pub fn product_of_nets(nets: Vec<Arc<ClampNet>>, delta_lambdas: &[f64]) -> Result<ProductNet> {
    if nets.is_empty() || nets.len() != delta_lambdas.len() {
        return structure("product net needs one Δ per factor and at least one factor");
    }
    let indices: Vec<u32> = nets.iter().map(|n| (-n.eta().ln()).round().max(1.0) as u32).collect();
    let mut delta_lambda = 0.0;
    let mut dims = Vec::new();
    let mut cardinality: usize = 1;
    for ((net, dl), &i) in nets.iter().zip(delta_lambdas).zip(&indices) {
        if *dl < 0.0 {
            return domain("Δ_λ must be nonnegative");
        }
        delta_lambda += dl + i as f64 * net.dim() as f64;
        dims.push((net.dim(), i));
        cardinality = cardinality.saturating_mul(net.len());
    }
    if cardinality > NET_CAP {
        return Err(Error::Budget { what: "product net size".into(), value: cardinality as f64, cap: NET_CAP as f64 });
    }
    Ok(ProductNet { factors: nets, indices, delta_lambda, log_card_bound: log_card_bound(&dims), cardinality })
}

impl ProductNet {
    /// Member index tuples in mixed-radix order.
    pub fn tuples(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let sizes: Vec<usize> = self.factors.iter().map(|f| f.len()).collect();
        (0..self.cardinality).map(move |mut flat| {
            sizes
                .iter()
                .map(|&s| {
                    let i = flat % s;
                    flat /= s;
                    i
                })
                .collect()
        })
    }

    pub fn member(&self, tuple: &[usize]) -> Vec<GridFunction> {
        self.factors.iter().zip(tuple).map(|(f, &i)| f.member(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn legendre_model(dim: usize) -> LinearModel {
        let m = Arc::new(DesignMeasure::linspace(201).unwrap());
        let fs: Vec<GridFunction> =
            (0..dim).map(|d| GridFunction::from_fn(&m, |x| x[0].powi(d as i32)).unwrap()).collect();
        LinearModel::span("poly", &fs, 0.0).unwrap()
    }

    fn ball_sample(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..radius)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= radius * radius {
                return v;
            }
        }
    }

    #[test]
    fn singleton_net_has_one_clamped_member() {
        let m = Arc::new(DesignMeasure::linspace(11).unwrap());
        let t = GridFunction::from_fn(&m, |x| 3.0 * x[0]).unwrap();
        let net = build_eta_net(&ClampedModel::singleton("t", t.clone()), 0.5, 0).unwrap();
        assert_eq!(net.len(), 1);
        let member = net.member(0);
        for (a, b) in member.values().iter().zip(t.values()) {
            assert_eq!(*a, b.clamp(-1.0, 1.0));
        }
    }

    #[test]
    fn constants_at_unit_resolution() {
        let model = clamp_model(&legendre_model(1)).unwrap();
        let net = build_eta_net(&model, 1.0, 7).unwrap();
        assert!(net.len() <= 5);
        assert!(net.separation() > 1.0);
        for k in 0..=40 {
            let c = -2.0 + 0.1 * k as f64;
            let d = (0..net.len()).map(|i| (net.coefficient(i)[0] - c).abs()).fold(f64::INFINITY, f64::min);
            assert!(d <= 1.0 + NET_SLACK);
        }
    }

    #[test]
    fn plane_at_half_resolution_covers() {
        let model = clamp_model(&legendre_model(2)).unwrap();
        let net = build_eta_net(&model, 0.5, 11).unwrap();
        assert!(net.len() <= 100);
        assert!(net.separation() > 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = ball_sample(&mut rng, 2, 2.0);
            let d = (0..net.len())
                .map(|i| net.coefficient(i).iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 0.5 + NET_SLACK);
        }
    }

    #[test]
    fn lattice_counts_below_bound() {
        for dim in 1..=8usize {
            for eta in [1.0, 0.5] {
                if dim >= 7 && eta < 1.0 {
                    continue;
                }
                let spec = lattice_spec(dim);
                let spacing = eta / spec.ratio * (1.0 - 1e-9);
                let scale = spacing / spec.min_dist;
                let mut count = 0usize;
                enumerate_lattice(dim, spec, (2.0 + spec.ratio * spacing) / scale, &mut |_| {
                    count += 1;
                    Ok(())
                })
                .unwrap();
                assert!((count as f64) <= (5.0 / eta).powi(dim as i32), "dim {dim} eta {eta}: {count}");
            }
        }
    }

    #[test]
    fn e8_kissing_number() {
        let mut count = 0;
        enumerate_lattice(8, lattice_spec(8), 2f64.sqrt(), &mut |_| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 241);
    }

    #[test]
    fn approx_check_on_constant() {
        let model = clamp_model(&legendre_model(1)).unwrap();
        let net = build_eta_net(&model, 0.5, 3).unwrap();
        let v = GridFunction::constant(model.measure(), 0.3).unwrap();
        let r = net_approx_check(&net, &v).unwrap();
        assert_abs_diff_eq!(r.model_dist, 0.0, epsilon = 1e-12);
        assert!(r.net_dist <= 0.5);
        assert!(r.holds);
        let (i, _) = net.nearest(&net.member(2)).unwrap();
        assert_eq!(net.nearest(&net.member(i)).unwrap().1, 0.0);
    }

    #[test]
    fn zero_model_is_singleton() {
        let m = Arc::new(DesignMeasure::linspace(5).unwrap());
        let zero = LinearModel::zero("zero", m, 0.0);
        let net = build_eta_net(&clamp_model(&zero).unwrap(), 0.3, 0).unwrap();
        assert_eq!(net.len(), 1);
    }

    #[test]
    fn product_bounds() {
        let one = clamp_model(&legendre_model(1)).unwrap();
        let two = clamp_model(&legendre_model(2)).unwrap();
        let p = build_product_net(&[NetFactor { model: one.clone(), delta_lambda: 0.0, index: 2 }], 0).unwrap();
        assert_abs_diff_eq!(p.log_card_bound, 2.0 + 5f64.ln(), epsilon = 1e-12);
        assert!((p.cardinality as f64).ln() <= p.log_card_bound);
        let p = build_product_net(
            &[
                NetFactor { model: one, delta_lambda: 0.5, index: 1 },
                NetFactor { model: two, delta_lambda: 0.25, index: 1 },
            ],
            0,
        )
        .unwrap();
        assert_abs_diff_eq!(p.log_card_bound, 3.0 * (1.0 + 5f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(p.delta_lambda, 0.75 + 3.0, epsilon = 1e-12);
        assert_eq!(p.tuples().count(), p.cardinality);
        let m = one_measure();
        let s1 = ClampedModel::singleton("a", GridFunction::constant(&m, 0.1).unwrap());
        let s2 = ClampedModel::singleton("b", GridFunction::constant(&m, 0.2).unwrap());
        let p = build_product_net(
            &[NetFactor { model: s1, delta_lambda: 1.0, index: 1 }, NetFactor { model: s2, delta_lambda: 2.0, index: 1 }],
            0,
        )
        .unwrap();
        assert_eq!(p.cardinality, 1);
        assert_abs_diff_eq!(p.delta_lambda, 3.0);
    }

    fn one_measure() -> Arc<DesignMeasure> {
        Arc::new(DesignMeasure::linspace(5).unwrap())
    }

    #[test]
    fn dimension_guard() {
        let m = Arc::new(DesignMeasure::linspace(50).unwrap());
        let fs: Vec<GridFunction> = (0..9).map(|d| GridFunction::from_fn(&m, |x| x[0].powi(d)).unwrap()).collect();
        let model = clamp_model(&LinearModel::span("big", &fs, 0.0).unwrap()).unwrap();
        assert!(build_eta_net(&model, 1.0, 0).is_err());
    }

    #[test]
    fn packing_net_on_circle() {
        let model = legendre_model(2);
        let sampler: Sampler = Arc::new(|rng: &mut ChaCha8Rng| {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            vec![a.cos(), a.sin()]
        });
        let c = ClampedModel::sampled(&model, sampler, 2000).unwrap();
        let net = build_eta_net(&c, 0.3, 5).unwrap();
        assert!(net.separation() > 0.3);
        assert!(net.covering_radius() <= 0.3);
        assert!(net.len() as f64 <= (5.0f64 / 0.3).powi(2));
    }
}
