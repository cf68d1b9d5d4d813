//! Ready-made model streams: smooth composites, additive and multiple-index
//! models, PCA regression, plain piecewise polynomials, plus the ANN budget
//! planner.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approx::{MAX_DEGREE, 
    enumerate_partitions_with, legendre, prior_deltas, regular_partitions, DyadicPartition, PartitionLimits, PolySpaceBuilder,
    PriorScheme, PARTITION_CAP,
};
use crate::composite::{Composer, InnerMember, OuterSpace};
use crate::error::{domain, structure, Error, Result};
use crate::function::{DesignMeasure, GridFunction};
use crate::model::{KraftCertificate, LinearModel};
use crate::nets::{build_eta_net, clamp_model, product_of_nets, ClampNet, ClampedModel, Membership, Sampler};
use crate::selector::{mix_streams, ModelStream};

/// How a family enumerates dyadic partitions of a cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum PartitionScheme {
    /// Recursive splits with at most `max_cells` cells.
    Recursive {
        max_cells: usize,
        #[serde(default)]
        max_level: Option<u32>,
    },
    /// Regular grids with every per-axis level at most `max_level`.
    Regular { max_level: u32 },
    /// Regular grids with the same level on every axis, up to `max_level`.
    Isotropic { max_level: u32 },
}

impl PartitionScheme {
    pub fn partitions(&self, dim: usize) -> Result<Vec<DyadicPartition>> {
        match *self {
            PartitionScheme::Recursive { max_cells, max_level } => {
                let limits = PartitionLimits { cell_budget: max_cells, max_level, cap: PARTITION_CAP };
                Ok(enumerate_partitions_with(dim, limits)?.partitions)
            }
            PartitionScheme::Regular { max_level } => Ok(regular_partitions(dim, max_level)),
            PartitionScheme::Isotropic { max_level } => {
                Ok((0..=max_level).map(|m| DyadicPartition::regular(&vec![m; dim])).collect())
            }
        }
    }

    /// Partitions with their prior weights `Δ`.
    pub fn weighted(&self, dim: usize, prior: PriorScheme) -> Result<Vec<(Arc<DyadicPartition>, f64)>> {
        let parts = self.partitions(dim)?;
        let cells: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        let deltas = prior_deltas(&cells, prior)?;
        Ok(parts.into_iter().map(Arc::new).zip(deltas).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    SmoothComposite,
    Additive,
    MultiIndex,
    PcaKnown,
    PcaUnknown,
    Plain,
    NestedPolynomial,
}

fn default_one() -> usize {
    1
}
fn default_max_i() -> u32 {
    1
}
fn default_kappa() -> f64 {
    crate::selector::DEFAULT_KAPPA
}
fn default_outer() -> PartitionScheme {
    PartitionScheme::Recursive { max_cells: 4, max_level: None }
}
fn default_inner() -> PartitionScheme {
    PartitionScheme::Recursive { max_cells: 2, max_level: None }
}
fn default_max_degree() -> usize {
    6
}
fn default_max_cubes() -> u32 {
    8
}
fn default_cloud() -> usize {
    4000
}

/// Family description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub family: FamilyKind,
    /// Number of inner functions (largest one for PCA).
    #[serde(default = "default_one")]
    pub l: usize,
    /// Input dimension; must match the design.
    #[serde(default = "default_one")]
    pub k: usize,
    /// Outer polynomial degree.
    #[serde(default)]
    pub r: usize,
    /// Inner polynomial degree.
    #[serde(default)]
    pub inner_r: usize,
    #[serde(default = "default_outer")]
    pub outer: PartitionScheme,
    #[serde(default = "default_inner")]
    pub inner: PartitionScheme,
    /// Largest net index `i`, so the finest net has `η = e^{-max_i}`.
    #[serde(default = "default_max_i")]
    pub max_i: u32,
    #[serde(default)]
    pub prior: PriorScheme,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub seed: u64,
    /// Largest degree of the nested polynomial family.
    #[serde(default = "default_max_degree")]
    pub max_degree: usize,
    /// Largest number `D` of cubes per axis for PCA outer spaces.
    #[serde(default = "default_max_cubes")]
    pub max_cubes: u32,
    /// Sample cloud for nets of sets known only through a sampler.
    #[serde(default = "default_cloud")]
    pub cloud: usize,
}

impl FamilyConfig {
    pub fn new(family: FamilyKind, k: usize) -> FamilyConfig {
        FamilyConfig {
            family,
            l: 1,
            k,
            r: 0,
            inner_r: 0,
            outer: default_outer(),
            inner: default_inner(),
            max_i: 1,
            prior: PriorScheme::default(),
            kappa: default_kappa(),
            seed: 0,
            max_degree: default_max_degree(),
            max_cubes: default_max_cubes(),
            cloud: default_cloud(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.l == 0 || self.k == 0 {
            return bad("l and k must be positive");
        }
        if self.max_i == 0 || self.max_cubes == 0 {
            return bad("caps must be positive");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if [self.r, self.inner_r, self.max_degree].iter().any(|&d| d > MAX_DEGREE) {
            return Err(Error::Config(format!("polynomial degrees are capped at {MAX_DEGREE}")));
        }
        match self.family {
            FamilyKind::Additive if self.k < 2 => bad("additive models need k >= 2"),
            FamilyKind::Additive if self.l != 1 => bad("additive models use a univariate outer function"),
            FamilyKind::MultiIndex | FamilyKind::PcaKnown | FamilyKind::PcaUnknown if self.l > 3 => bad("l is capped at 3"),
            FamilyKind::PcaKnown | FamilyKind::PcaUnknown if self.l > self.k => bad("PCA needs l <= k"),
            _ => Ok(()),
        }
    }
}

/// One choice `(T, i)` for an inner coordinate: the net of `T` at
/// `η = e^{-i}` and the prior weight `Δ_λ(T)`.
#[derive(Debug, Clone)]
pub struct InnerFactor {
    pub net: Arc<ClampNet>,
    pub delta_lambda: f64,
}

impl InnerFactor {
    /// `e^{-(Δ_λ + i𝒟)} |net| / e^{log-card bound}`: the Kraft mass of
    /// this factor once every net member is weighted uniformly.
    fn kraft_mass(&self) -> f64 {
        let dim = self.net.dim() as f64;
        let i = (-self.net.eta().ln()).round().max(1.0);
        let log_bound = dim * (i + 5f64.ln());
        self.net.len() as f64 * (-(self.delta_lambda + i * dim + log_bound)).exp()
    }
}

/// Nets of `model` for `i = 1..=max_i` (only `i = 1` for a zero-dimensional
/// model).
pub fn inner_factors(model: &ClampedModel, delta_lambda: f64, max_i: u32, seed: u64) -> Result<Vec<InnerFactor>> {
    let top = if model.dim() == 0 { 1 } else { max_i };
    (1..=top)
        .map(|i| {
            let net = build_eta_net(model, (-(i as f64)).exp(), seed.wrapping_add(i as u64))?;
            Ok(InnerFactor { net: Arc::new(net), delta_lambda })
        })
        .collect()
}

/// Composite models `f∘t` for every outer space and every member `t` of
/// every product of per-coordinate factor choices.
pub fn composite_stream(design: &Arc<DesignMeasure>, outers: Vec<OuterSpace>, choices: Vec<Vec<InnerFactor>>) -> Result<ModelStream> {
    if outers.is_empty() || choices.is_empty() || choices.iter().any(|c| c.is_empty()) {
        return domain("composite stream needs outer spaces and inner choices");
    }
    let l = choices.len();
    if outers.iter().any(|f| f.dim != l) {
        return structure("outer spaces must live on [-1,1]^l");
    }
    let outer_mass: f64 = outers.iter().map(|f| (-f.delta_gamma).exp()).sum();
    let inner_mass: f64 = choices.iter().map(|c| c.iter().map(InnerFactor::kraft_mass).sum::<f64>()).product();
    let members: f64 = choices.iter().map(|c| c.iter().map(|f| f.net.len() as f64).sum::<f64>()).product();
    let total = members * outers.len() as f64;
    if total > usize::MAX as f64 / 2.0 {
        return Err(Error::Budget { what: "stream size".into(), value: total, cap: usize::MAX as f64 });
    }
    let certificate = KraftCertificate::new(outer_mass * inner_mass, total as usize)?;

    let radix: Vec<usize> = choices.iter().map(|c| c.len()).collect();
    let tuples: usize = radix.iter().product();
    let design = design.clone();
    let outers = Arc::new(outers);
    let iter = (0..tuples).flat_map(move |flat| {
        let mut rest = flat;
        let picked: Vec<&InnerFactor> = radix
            .iter()
            .zip(&choices)
            .map(|(&r, c)| {
                let f = &c[rest % r];
                rest /= r;
                f
            })
            .collect();
        let nets: Vec<Arc<ClampNet>> = picked.iter().map(|f| f.net.clone()).collect();
        let deltas: Vec<f64> = picked.iter().map(|f| f.delta_lambda).collect();
        let design = design.clone();
        let outers = outers.clone();
        let per_member: Box<dyn Iterator<Item = Result<LinearModel>> + Send> = match product_of_nets(nets, &deltas) {
            Err(e) => Box::new(std::iter::once(Err(e))),
            Ok(product) => {
                let product = Arc::new(product);
                let tuples: Vec<Vec<usize>> = product.tuples().collect();
                Box::new(tuples.into_iter().flat_map(move |tuple| {
                    let id = product
                        .factors
                        .iter()
                        .zip(&product.indices)
                        .zip(&tuple)
                        .map(|((net, i), m)| format!("{}@{}#{}", net.source().id(), i, m))
                        .collect::<Vec<_>>()
                        .join(",");
                    let inner = InnerMember {
                        id,
                        values: product.member(&tuple),
                        delta_lambda: product.delta_lambda,
                        log_card_bound: product.log_card_bound,
                        delta_nu: 0.0,
                    };
                    compose_all(design.clone(), inner, outers.clone())
                }))
            }
        };
        per_member
    });
    Ok(ModelStream::new(iter, certificate))
}

fn compose_all(
    design: Arc<DesignMeasure>,
    inner: InnerMember,
    outers: Arc<Vec<OuterSpace>>,
) -> Box<dyn Iterator<Item = Result<LinearModel>> + Send> {
    match Composer::new(design, inner) {
        Err(e) => Box::new(std::iter::once(Err(e))),
        Ok(mut composer) => Box::new((0..outers.len()).map(move |o| composer.compose(&outers[o]).map(|c| c.model))),
    }
}

fn check_design(cfg: &FamilyConfig, design: &DesignMeasure) -> Result<()> {
    cfg.validate()?;
    if design.dim() != cfg.k {
        return Err(Error::Config(format!("family expects k={} inputs, design has {}", cfg.k, design.dim())));
    }
    Ok(())
}

fn outer_spaces(cfg: &FamilyConfig) -> Result<Vec<OuterSpace>> {
    Ok(cfg
        .outer
        .weighted(cfg.l, cfg.prior)?
        .iter()
        .map(|(p, d)| OuterSpace::from_partition(p, cfg.r, *d))
        .collect())
}

/// Seed for the nets of inner choice number `choice`.
fn net_seed(cfg: &FamilyConfig, choice: usize) -> u64 {
    cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1000 * choice as u64)
}

/// Composites `f∘(t_1..t_l)` with `f` piecewise polynomial on `[-1,1]^l`
/// and each `t_j` from a net of a piecewise polynomial space on the design.
pub fn smooth_composite_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>) -> Result<ModelStream> {
    check_design(cfg, design)?;
    let mut builder = PolySpaceBuilder::new(design.clone(), cfg.inner_r)?;
    let mut factors = Vec::new();
    for (c, (p, delta)) in cfg.inner.weighted(cfg.k, cfg.prior)?.iter().enumerate() {
        let space = builder.build(p)?;
        let clamped = clamp_model(&space.model)?;
        factors.extend(inner_factors(&clamped, *delta, cfg.max_i, net_seed(cfg, c))?);
    }
    composite_stream(design, outer_spaces(cfg)?, vec![factors; cfg.l])
}

/// Basis functions of a univariate piecewise polynomial space acting on
/// coordinate `axis` of the design.
fn coordinate_space(design: &Arc<DesignMeasure>, axis: usize, partition: &DyadicPartition, degree: usize) -> Result<Vec<GridFunction>> {
    let mut out = Vec::new();
    let mut table = vec![0.0; degree + 1];
    for cell in partition.cells() {
        let iv = cell.axes[0];
        let mut cols = vec![vec![0.0; design.len()]; degree + 1];
        for (i, x) in design.nodes().enumerate() {
            if iv.contains(x[axis]) {
                legendre(iv.local(x[axis]), degree, &mut table);
                cols.iter_mut().zip(&table).for_each(|(c, v)| c[i] = *v);
            }
        }
        for c in cols {
            out.push(GridFunction::new(design.clone(), c)?);
        }
    }
    Ok(out)
}

/// Composites `f(t_1(x_1) + … + t_k(x_k))` with univariate `f` and `t_j`.
pub fn additive_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>) -> Result<ModelStream> {
    check_design(cfg, design)?;
    let univariate = cfg.inner.weighted(1, cfg.prior)?;
    let m = univariate.len();
    let combos = m.checked_pow(cfg.k as u32).ok_or_else(|| Error::Budget {
        what: "additive combinations".into(),
        value: f64::INFINITY,
        cap: usize::MAX as f64,
    })?;
    let mut factors = Vec::new();
    for flat in 0..combos {
        let mut rest = flat;
        let mut functions = Vec::new();
        let mut delta = 0.0;
        let mut labels = Vec::new();
        for axis in 0..cfg.k {
            let (p, d) = &univariate[rest % m];
            rest /= m;
            functions.extend(coordinate_space(design, axis, p, cfg.inner_r)?);
            delta += d;
            labels.push(p.label());
        }
        let id = format!("add[{}]", labels.join("+"));
        let model = LinearModel::span(id, &functions, 0.0)?;
        let clamped = clamp_model(&model)?;
        factors.extend(inner_factors(&clamped, delta, cfg.max_i, net_seed(cfg, flat))?);
    }
    composite_stream(design, outer_spaces(cfg)?, vec![factors])
}

/// The span of the coordinate functions `x ↦ x_a` on the design, with the
/// map between direction vectors `θ` and orthonormal coefficients.
pub struct LinearForms {
    pub model: LinearModel,
    /// `c = to_coefficients · θ`.
    pub to_coefficients: DMatrix<f64>,
    /// `θ = to_direction · c`.
    pub to_direction: DMatrix<f64>,
}

pub fn linear_forms(design: &Arc<DesignMeasure>) -> Result<LinearForms> {
    let k = design.dim();
    let coords: Vec<GridFunction> =
        (0..k).map(|a| GridFunction::from_fn(design, |x| x[a])).collect::<Result<_>>()?;
    let model = LinearModel::span("lin", &coords, 0.0)?;
    if model.dim() != k {
        return structure("coordinate functions are linearly dependent on the design");
    }
    let basis = model.basis_functions();
    let mut to_coefficients = DMatrix::zeros(k, k);
    for (a, x) in coords.iter().enumerate() {
        for (b, q) in basis.iter().enumerate() {
            to_coefficients[(b, a)] = x.inner(q)?;
        }
    }
    let to_direction = to_coefficients
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Structure("coordinate map is singular".into()))?;
    Ok(LinearForms { model, to_coefficients, to_direction })
}

/// `T_0 = {x ↦ <θ,x> : |θ|_1 ≤ 1}` as a body in the coefficient space of
/// the coordinate span.
pub fn linear_index_set(design: &Arc<DesignMeasure>) -> Result<ClampedModel> {
    let forms = linear_forms(design)?;
    let to_direction = forms.to_direction.clone();
    let k = design.dim() as f64;
    // A c-distance s to the body forces an θ-distance of at most s/σ_min,
    // and the θ-distance to the ℓ_1 ball is at least (|θ|_1 - 1)/√k.
    let sigma_min = forms.to_coefficients.clone().singular_values().min();
    let near: Membership = Arc::new(move |c: &[f64], slack: f64| {
        let theta = &to_direction * DVector::from_column_slice(c);
        theta.iter().map(|v| v.abs()).sum::<f64>() <= 1.0 + k.sqrt() * slack / sigma_min
    });
    // |Σ θ_a x_a| ≤ max_a ‖x_a‖ when |θ|_1 ≤ 1.
    let radius = (0..design.dim())
        .map(|a| design.nodes().zip(design.weights()).map(|(x, w)| w * x[a] * x[a]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    ClampedModel::body(&forms.model.with_id("lin1"), near, radius * (1.0 + 1e-9))
}

/// Composites `f(<θ_1,x>, …, <θ_l,x>)` with each direction from a net of
/// the `ℓ_1` unit ball.
pub fn multi_index_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>) -> Result<ModelStream> {
    check_design(cfg, design)?;
    let set = linear_index_set(design)?;
    let factors = inner_factors(&set, 0.0, cfg.max_i, net_seed(cfg, 0))?;
    composite_stream(design, outer_spaces(cfg)?, vec![factors; cfg.l])
}

/// Piecewise polynomials on dyadic partitions of the input cube.
pub fn plain_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>) -> Result<ModelStream> {
    check_design(cfg, design)?;
    let weighted = cfg.outer.weighted(cfg.k, cfg.prior)?;
    let mut builder = PolySpaceBuilder::new(design.clone(), cfg.r)?;
    let models = weighted
        .iter()
        .map(|(p, d)| Ok(builder.build(p)?.model.with_delta(*d)))
        .collect::<Result<Vec<_>>>()?;
    ModelStream::from_models(models)
}

/// Tensor polynomials of coordinate degree `d = 0..=max_degree` on the
/// whole cube, with `Δ_d = d + 1`.
pub fn nested_polynomial_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>) -> Result<ModelStream> {
    check_design(cfg, design)?;
    let root = Arc::new(DyadicPartition::root(design.dim()));
    let models = (0..=cfg.max_degree)
        .map(|d| {
            let space = PolySpaceBuilder::new(design.clone(), d)?.build(&root)?;
            Ok(space.model.with_id(format!("poly{d}")).with_delta(d as f64 + 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelStream::from_models(models)
}

/// Principal axes of a design measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaDecomposition {
    pub center: Vec<f64>,
    /// Row-major `k × k`.
    pub gamma: Vec<f64>,
    pub eigvals: Vec<f64>,
    /// `eigvecs[j]` is the unit vector of the `j`-th largest eigenvalue.
    pub eigvecs: Vec<Vec<f64>>,
}

pub fn pca_decompose(measure: &DesignMeasure) -> Result<PcaDecomposition> {
    let k = measure.dim();
    let mut center = vec![0.0; k];
    for (x, w) in measure.nodes().zip(measure.weights()) {
        center.iter_mut().zip(x).for_each(|(c, v)| *c += w * v);
    }
    let mut gamma = DMatrix::<f64>::zeros(k, k);
    for (x, w) in measure.nodes().zip(measure.weights()) {
        let d = DVector::from_iterator(k, x.iter().zip(&center).map(|(v, c)| v - c));
        gamma += *w * &d * d.transpose();
    }
    let gamma = (&gamma + gamma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gamma.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigvals = Vec::with_capacity(k);
    let mut eigvecs = Vec::with_capacity(k);
    // Eigenvalues this far below the spectrum's scale are rounding noise.
    let floor = 1e-12 * eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for &j in &order {
        let v = eig.eigenvalues[j];
        if v < -1e-10 {
            return Err(Error::Structure(format!("covariance eigenvalue {v} is negative")));
        }
        eigvals.push(if v <= floor { 0.0 } else { v });
        eigvecs.push(eig.eigenvectors.column(j).iter().copied().collect());
    }
    Ok(PcaDecomposition { center, gamma: gamma.transpose().as_slice().to_vec(), eigvals, eigvecs })
}

/// `∫ |x - Π_V x|² dμ` for the affine subspace through `point` spanned by
/// `directions` (orthonormalized here).
pub fn affine_residual(measure: &DesignMeasure, point: &[f64], directions: &[Vec<f64>]) -> Result<f64> {
    let k = measure.dim();
    if point.len() != k || directions.iter().any(|d| d.len() != k) {
        return structure("subspace lives in the wrong dimension");
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for d in directions {
        let mut v = DVector::from_column_slice(d);
        for _ in 0..2 {
            for b in &basis {
                let p = b.dot(&v);
                v -= p * b;
            }
        }
        let norm = v.norm();
        if norm > 1e-12 {
            basis.push(v / norm);
        }
    }
    let mut total = 0.0;
    for (x, w) in measure.nodes().zip(measure.weights()) {
        let mut d = DVector::from_iterator(k, x.iter().zip(point).map(|(v, c)| v - c));
        for b in &basis {
            let p = b.dot(&d);
            d -= p * b;
        }
        total += w * d.norm_squared();
    }
    Ok(total)
}

/// Tail eigenvalue sum `Σ_{j>l} λ_j`, checked against the direct
/// projection residual onto the leading `l`-dimensional principal subspace.
pub fn pca_residual(measure: &DesignMeasure, l: usize) -> Result<f64> {
    let pca = pca_decompose(measure)?;
    pca_residual_of(measure, &pca, l)
}

pub fn pca_residual_of(measure: &DesignMeasure, pca: &PcaDecomposition, l: usize) -> Result<f64> {
    let k = pca.eigvals.len();
    if l > k {
        return domain(format!("l={l} exceeds the dimension {k}"));
    }
    let tail = pca.eigvals[l..].iter().fold(0.0, |acc, v| acc + v);
    let direct = affine_residual(measure, &pca.center, &pca.eigvecs[..l])?;
    if (tail - direct).abs() > 1e-8 {
        return Err(Error::Structure(format!("tail sum {tail} differs from the projection residual {direct}")));
    }
    Ok(tail)
}

/// `Δ_ν(l) = log(2l²)`, from `ν(l) = l^{-2}/2`.
pub fn pca_mixing_delta(l: usize) -> f64 {
    (2.0 * (l * l) as f64).ln()
}

/// PCA regression models mixed over `l = 1..=cfg.l`. With `known`, inner
/// functions are the fixed projections `<x, ū_j>`; otherwise each is drawn
/// from a net of `{x ↦ <x,v> : |v| = 1}`. Outer spaces are piecewise
/// constants on `D^l` equal cubes with `Δ_γ = D`.
pub fn pca_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>, pca: &PcaDecomposition, known: bool) -> Result<ModelStream> {
    check_design(cfg, design)?;
    let mut streams = Vec::new();
    for l in 1..=cfg.l {
        let outers: Vec<OuterSpace> = (1..=cfg.max_cubes).map(|d| OuterSpace::cube_grid(l, d, d as f64)).collect();
        let choices = if known {
            (0..l)
                .map(|j| {
                    let v = &pca.eigvecs[j];
                    let t = GridFunction::from_fn(design, |x| x.iter().zip(v).map(|(a, b)| a * b).sum())?;
                    let model = ClampedModel::singleton(format!("pc{j}"), t);
                    inner_factors(&model, 0.0, 1, 0)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            let sphere = unit_sphere_set(design, cfg.cloud)?;
            vec![inner_factors(&sphere, 0.0, cfg.max_i, net_seed(cfg, l))?; l]
        };
        streams.push((composite_stream(design, outers, choices)?, pca_mixing_delta(l)));
    }
    mix_streams(streams)
}

/// `{x ↦ <x,v> : |v| = 1}` known through uniform samples of `v`.
pub fn unit_sphere_set(design: &Arc<DesignMeasure>, cloud: usize) -> Result<ClampedModel> {
    let forms = linear_forms(design)?;
    let k = design.dim();
    let to_coefficients = forms.to_coefficients.clone();
    let sample: Sampler = Arc::new(move |rng| {
        let v = DVector::<f64>::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
        let v = &v / v.norm();
        (&to_coefficients * v).iter().copied().collect()
    });
    ClampedModel::sampled(&forms.model.with_id("sphere"), sample, cloud)
}

/// Builds the stream a configuration describes.
pub fn family_stream(cfg: &FamilyConfig, design: &Arc<DesignMeasure>) -> Result<ModelStream> {
    match cfg.family {
        FamilyKind::SmoothComposite => smooth_composite_stream(cfg, design),
        FamilyKind::Additive => additive_stream(cfg, design),
        FamilyKind::MultiIndex => multi_index_stream(cfg, design),
        FamilyKind::Plain => plain_stream(cfg, design),
        FamilyKind::NestedPolynomial => nested_polynomial_stream(cfg, design),
        FamilyKind::PcaKnown | FamilyKind::PcaUnknown => {
            let pca = pca_decompose(design)?;
            pca_stream(cfg, design, &pca, cfg.family == FamilyKind::PcaKnown)
        }
    }
}

/// Writes one CSV row `(model, dim, charged_dim, delta)` per model and
/// returns the number of models and their Kraft sum.
pub fn write_model_census<W: Write>(stream: ModelStream, out: W) -> Result<(usize, f64)> {
    #[derive(Serialize)]
    struct Row<'a> {
        model: &'a str,
        dim: usize,
        charged_dim: usize,
        delta: f64,
    }
    let mut w = csv::Writer::from_writer(out);
    let mut count = 0;
    let mut sum = 0.0;
    for m in stream {
        let m = m?;
        count += 1;
        sum += (-m.delta()).exp();
        w.serialize(Row { model: m.id(), dim: m.dim(), charged_dim: m.charged_dim(), delta: m.delta() })?;
    }
    w.flush()?;
    Ok((count, sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnTerms {
    /// `K² 2^{-2qγ}`.
    pub approximation: f64,
    /// `K² R² / l`.
    pub width: f64,
    /// `l k τ q`.
    pub complexity: f64,
    /// `l k τ q (qα)^{-1} log_+(l R² L² / (kτ))`.
    pub logarithmic: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnBudget {
    pub l_star: u64,
    pub q_star: u64,
    pub terms: AnnTerms,
}

pub const ANN_SCAN_CAP: u64 = 10_000;

/// Risk decomposition `ℛ(l,q)` with unit constant.
pub fn ann_terms(l: u64, q: u64, big_k: f64, r: f64, lip: f64, alpha: f64, gamma: f64, k: usize, tau: f64) -> AnnTerms {
    let (l, q, kk) = (l as f64, q as f64, k as f64);
    let approximation = big_k * big_k * 2f64.powf(-2.0 * q * gamma);
    let width = big_k * big_k * r * r / l;
    let complexity = l * kk * tau * q;
    let logarithmic = complexity / (q * alpha) * (l * r * r * lip * lip / (kk * tau)).ln().max(0.0);
    AnnTerms { approximation, width, complexity, logarithmic, total: approximation + width + complexity + logarithmic }
}

/// Chooses the width `l` and depth parameter `q` of the network family.
#[allow(clippy::too_many_arguments)]
pub fn ann_budget(big_k: f64, r: f64, lip: f64, alpha: f64, gamma: f64, q_psi: u64, k: usize, tau: f64) -> Result<AnnBudget> {
    if !(big_k > 0.0 && r > 0.0 && lip > 0.0 && gamma > 0.0 && tau > 0.0 && q_psi >= 1 && k >= 1) {
        return domain("ANN planner inputs must be positive");
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain("alpha must lie in (0,1]");
    }
    let kt = k as f64 * tau;
    let (l_star, q_star) = if r * big_k <= (q_psi as f64 * kt).sqrt() {
        (1, q_psi)
    } else {
        let mut q = q_psi;
        while 2f64.powf(-2.0 * q as f64 * gamma) > (r / big_k) * (q as f64 * kt).sqrt() {
            q += 1;
            if q > ANN_SCAN_CAP {
                return domain("q scan exceeded its cap");
            }
        }
        ((r * big_k / (q as f64 * kt).sqrt()).ceil() as u64, q)
    };
    Ok(AnnBudget { l_star, q_star, terms: ann_terms(l_star, q_star, big_k, r, lip, alpha, gamma, k, tau) })
}
