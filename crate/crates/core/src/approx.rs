//! Piecewise polynomials on anisotropic dyadic partitions of `[-1,1]^k`,
//! their enumeration census and complexity priors.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, structure, Error, Result};
use crate::function::{DesignMeasure, GridFunction, Lp};
use crate::model::{kraft_sum, Block, LinearModel, KRAFT_TOL};

/// Largest supported coordinate degree.
pub const MAX_DEGREE: usize = 6;
/// Default cap on the number of enumerated partitions.
pub const PARTITION_CAP: usize = 100_000;

/// The interval `[-1 + 2 idx/den, -1 + 2 (idx+1)/den)`, closed at 1 for the
/// last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub den: u32,
    pub idx: u32,
}

impl Interval {
    pub const ROOT: Interval = Interval { den: 1, idx: 0 };

    pub fn index_of(den: u32, y: f64) -> u32 {
        let z = ((y + 1.0) * 0.5 * den as f64).floor();
        if z <= 0.0 {
            0
        } else {
            (z as u32).min(den - 1)
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        Self::index_of(self.den, y) == self.idx
    }

    pub fn bounds(&self) -> (f64, f64) {
        let w = 2.0 / self.den as f64;
        (-1.0 + w * self.idx as f64, -1.0 + w * (self.idx + 1) as f64)
    }

    /// Maps a point of the interval affinely onto `[-1,1]`.
    pub fn local(&self, y: f64) -> f64 {
        let (lo, hi) = self.bounds();
        (2.0 * (y - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    fn halves(&self) -> (Interval, Interval) {
        (Interval { den: 2 * self.den, idx: 2 * self.idx }, Interval { den: 2 * self.den, idx: 2 * self.idx + 1 })
    }

    fn parent(&self) -> Option<Interval> {
        (self.den > 1 && self.den % 2 == 0).then(|| Interval { den: self.den / 2, idx: self.idx / 2 })
    }

    pub fn level(&self) -> u32 {
        self.den.trailing_zeros()
    }
}

/// A hyperrectangle: one interval per axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub axes: Vec<Interval>,
}

impl Cell {
    pub fn root(dim: usize) -> Cell {
        Cell { axes: vec![Interval::ROOT; dim] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.axes.iter().zip(y).all(|(iv, &v)| iv.contains(v))
    }

    pub fn split(&self, axis: usize) -> (Cell, Cell) {
        let (a, b) = self.axes[axis].halves();
        let mut left = self.clone();
        let mut right = self.clone();
        left.axes[axis] = a;
        right.axes[axis] = b;
        (left, right)
    }

    fn parent(&self) -> Option<Cell> {
        let (axis, iv) = self.axes.iter().enumerate().filter(|(_, iv)| iv.den > 1).max_by_key(|(_, iv)| iv.den)?;
        let mut p = self.clone();
        p.axes[axis] = iv.parent().unwrap_or(Interval::ROOT);
        Some(p)
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|iv| 1.0 / iv.den as f64).product()
    }

    /// Compact label such as `1/2x0/1` (index over denominator per axis).
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (a, iv) in self.axes.iter().enumerate() {
            if a > 0 {
                s.push('x');
            }
            let _ = write!(s, "{}/{}", iv.idx, iv.den);
        }
        s
    }
}

/// Recursive axis-split history of a partition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum SplitTree {
    Leaf,
    Split { axis: usize, children: Box<(SplitTree, SplitTree)> },
}

impl SplitTree {
    fn leaves(&self, cell: Cell, out: &mut Vec<Cell>) {
        match self {
            SplitTree::Leaf => out.push(cell),
            SplitTree::Split { axis, children } => {
                let (l, r) = cell.split(*axis);
                children.0.leaves(l, out);
                children.1.leaves(r, out);
            }
        }
    }

    /// Replaces leaf number `target` (in traversal order) by a split.
    fn split_leaf(&self, target: &mut usize, axis: usize) -> SplitTree {
        match self {
            SplitTree::Leaf => {
                let hit = *target == 0;
                *target = target.wrapping_sub(1);
                if hit {
                    SplitTree::Split { axis, children: Box::new((SplitTree::Leaf, SplitTree::Leaf)) }
                } else {
                    SplitTree::Leaf
                }
            }
            SplitTree::Split { axis: a, children } => {
                let left = children.0.split_leaf(target, axis);
                let right = children.1.split_leaf(target, axis);
                SplitTree::Split { axis: *a, children: Box::new((left, right)) }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadicPartition {
    dim: usize,
    cells: Vec<Cell>,
    tree: SplitTree,
}

impl DyadicPartition {
    pub fn root(dim: usize) -> DyadicPartition {
        DyadicPartition::from_tree(dim, SplitTree::Leaf)
    }

    pub fn from_tree(dim: usize, tree: SplitTree) -> DyadicPartition {
        let mut cells = Vec::new();
        tree.leaves(Cell::root(dim), &mut cells);
        cells.sort();
        DyadicPartition { dim, cells, tree }
    }

    /// Regular grid with `2^levels[j]` cells along axis `j`.
    pub fn regular(levels: &[u32]) -> DyadicPartition {
        fn build(cell: &Cell, levels: &[u32]) -> SplitTree {
            match cell.axes.iter().zip(levels).position(|(iv, &m)| iv.level() < m) {
                None => SplitTree::Leaf,
                Some(axis) => {
                    let (l, r) = cell.split(axis);
                    SplitTree::Split { axis, children: Box::new((build(&l, levels), build(&r, levels))) }
                }
            }
        }
        let dim = levels.len();
        DyadicPartition::from_tree(dim, build(&Cell::root(dim), levels))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells in canonical (sorted) order.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn tree(&self) -> &SplitTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the unique cell containing `y`.
    pub fn locate(&self, y: &[f64]) -> Option<usize> {
        self.cells.iter().position(|c| c.contains(y))
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.cells.iter().map(|c| c.label()).collect();
        format!("[{}]", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLimits {
    pub cell_budget: usize,
    /// Finest allowed level on any axis.
    pub max_level: Option<u32>,
    pub cap: usize,
}

impl PartitionLimits {
    pub fn budget(cell_budget: usize) -> PartitionLimits {
        PartitionLimits { cell_budget, max_level: None, cap: PARTITION_CAP }
    }
}

/// All partitions reachable by recursive dyadic splits within the limits,
/// with their count per number of cells.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionCensus {
    pub k: usize,
    pub limits: PartitionLimits,
    pub partitions: Vec<DyadicPartition>,
    /// `counts[d]` partitions have exactly `d` cells.
    pub counts: Vec<usize>,
    /// `max_d log(count(d)) / (d + 1)`.
    pub c_estimate: f64,
}

impl PartitionCensus {
    pub fn count(&self, cells: usize) -> usize {
        self.counts.get(cells).copied().unwrap_or(0)
    }

    /// CSV rows `(k, budget, count, c_estimate)`, one per cell count.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "budget", "count", "c_estimate"])?;
        for (d, &c) in self.counts.iter().enumerate().skip(1) {
            w.write_record([self.k.to_string(), d.to_string(), c.to_string(), self.c_estimate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn enumerate_partitions(k: usize, cell_budget: usize) -> Result<PartitionCensus> {
    enumerate_partitions_with(k, PartitionLimits::budget(cell_budget))
}

pub fn enumerate_partitions_with(k: usize, limits: PartitionLimits) -> Result<PartitionCensus> {
    if k == 0 || limits.cell_budget == 0 {
        return domain("dimension and cell budget must be at least 1");
    }
    let mut seen: HashSet<Vec<Cell>> = HashSet::new();
    let root = DyadicPartition::root(k);
    seen.insert(root.cells.clone());
    let mut partitions = vec![root];
    let mut counts = vec![0, 1];
    let mut frontier = 0..1;
    for _ in 2..=limits.cell_budget {
        let mut found = 0;
        let start = partitions.len();
        for p in frontier.clone() {
            let mut leaves = Vec::new();
            partitions[p].tree.leaves(Cell::root(k), &mut leaves);
            for (leaf_index, leaf) in leaves.iter().enumerate() {
                for axis in 0..k {
                    if limits.max_level.is_some_and(|m| leaf.axes[axis].level() >= m) {
                        continue;
                    }
                    let tree = partitions[p].tree.split_leaf(&mut leaf_index.clone(), axis);
                    let candidate = DyadicPartition::from_tree(k, tree);
                    if seen.insert(candidate.cells.clone()) {
                        partitions.push(candidate);
                        found += 1;
                        if partitions.len() > limits.cap {
                            return Err(Error::Budget {
                                what: format!("partition count (k={k}, budget={})", limits.cell_budget),
                                value: partitions.len() as f64,
                                cap: limits.cap as f64,
                            });
                        }
                    }
                }
            }
        }
        counts.push(found);
        frontier = start..partitions.len();
        if found == 0 {
            break;
        }
    }
    let c_estimate = counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > 0)
        .map(|(d, &c)| (c as f64).ln() / (d + 1) as f64)
        .fold(0.0, f64::max);
    Ok(PartitionCensus { k, limits, partitions, counts, c_estimate })
}

/// Every regular grid with per-axis level at most `max_level`.
pub fn regular_partitions(k: usize, max_level: u32) -> Vec<DyadicPartition> {
    let per_axis = max_level as usize + 1;
    let total = per_axis.pow(k as u32);
    (0..total)
        .map(|mut flat| {
            let levels: Vec<u32> = (0..k)
                .map(|_| {
                    let m = (flat % per_axis) as u32;
                    flat /= per_axis;
                    m
                })
                .collect();
            DyadicPartition::regular(&levels)
        })
        .collect()
}

/// Legendre polynomials `P_0..P_r` at `x`.
pub fn legendre(x: f64, r: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if r >= 1 {
        out[1] = x;
    }
    for n in 1..r {
        out[n + 1] = ((2 * n + 1) as f64 * x * out[n] - n as f64 * out[n - 1]) / (n + 1) as f64;
    }
}

/// Tensor Legendre columns of coordinate degree ≤ `r` at the local
/// coordinates of `points` inside `cell`.
pub fn tensor_legendre_columns<'a>(cell: &Cell, r: usize, points: impl Iterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    let k = cell.dim();
    let width = (r + 1).pow(k as u32);
    let mut cols = vec![Vec::new(); width];
    let mut table = vec![0.0; k * (r + 1)];
    for y in points {
        for (a, iv) in cell.axes.iter().enumerate() {
            legendre(iv.local(y[a]), r, &mut table[a * (r + 1)..(a + 1) * (r + 1)]);
        }
        for (c, col) in cols.iter_mut().enumerate() {
            let mut rest = c;
            let mut v = 1.0;
            for a in 0..k {
                v *= table[a * (r + 1) + rest % (r + 1)];
                rest /= r + 1;
            }
            col.push(v);
        }
    }
    cols
}

/// Per-cell node lists on a fixed point set, memoized through dyadic
/// parents so refining partitions stays linear in the number of nodes.
pub struct CellIndex {
    dim: usize,
    points: Vec<f64>,
    lists: HashMap<Cell, Arc<Vec<u32>>>,
}

impl CellIndex {
    pub fn new(dim: usize, points: Vec<f64>) -> CellIndex {
        let n = points.len() / dim;
        let mut lists = HashMap::new();
        lists.insert(Cell::root(dim), Arc::new((0..n as u32).collect()));
        CellIndex { dim, points, lists }
    }

    pub fn point(&self, i: u32) -> &[f64] {
        &self.points[i as usize * self.dim..(i as usize + 1) * self.dim]
    }

    pub fn nodes(&mut self, cell: &Cell) -> Arc<Vec<u32>> {
        if let Some(list) = self.lists.get(cell) {
            return list.clone();
        }
        let parent_list = match cell.parent() {
            Some(p) if cell.axes.iter().all(|iv| iv.den.is_power_of_two()) => self.nodes(&p),
            _ => self.lists[&Cell::root(self.dim)].clone(),
        };
        let list: Vec<u32> = parent_list.iter().copied().filter(|&i| cell.contains(self.point(i))).collect();
        let list = Arc::new(list);
        self.lists.insert(cell.clone(), list.clone());
        list
    }
}

/// Piecewise polynomial space on a dyadic partition.
#[derive(Debug, Clone)]
pub struct PolySpace {
    pub partition: Arc<DyadicPartition>,
    pub degree: usize,
    pub model: LinearModel,
    /// `|cells| (r+1)^k`, the dimension on a measure charging every cell.
    pub nominal_dim: usize,
    /// Cells with no nodes under the measure.
    pub empty_cells: Vec<usize>,
}

impl PolySpace {
    pub fn delta(&self) -> f64 {
        self.model.delta()
    }

    pub fn cells(&self) -> usize {
        self.partition.len()
    }
}

/// Builds polynomial spaces on one measure, sharing cell blocks between
/// partitions.
pub struct PolySpaceBuilder {
    measure: Arc<DesignMeasure>,
    degree: usize,
    index: CellIndex,
    blocks: HashMap<Cell, (Option<Arc<Block>>, usize)>,
}

impl PolySpaceBuilder {
    pub fn new(measure: Arc<DesignMeasure>, degree: usize) -> Result<PolySpaceBuilder> {
        if degree > MAX_DEGREE {
            return domain(format!("degree {degree} above the conditioning cap {MAX_DEGREE}"));
        }
        let index = CellIndex::new(measure.dim(), measure.flat_nodes().to_vec());
        Ok(PolySpaceBuilder { measure, degree, index, blocks: HashMap::new() })
    }

    pub fn measure(&self) -> &Arc<DesignMeasure> {
        &self.measure
    }

    fn block(&mut self, cell: &Cell) -> (Option<Arc<Block>>, usize) {
        if let Some(b) = self.blocks.get(cell) {
            return b.clone();
        }
        let nodes = self.index.nodes(cell);
        let built = if self.degree == 0 {
            let b = Block::indicator(&self.measure, nodes.to_vec());
            let dropped = usize::from(b.is_none());
            (b.map(Arc::new), dropped)
        } else {
            let cols = tensor_legendre_columns(cell, self.degree, nodes.iter().map(|&i| self.measure.node(i as usize)));
            let (b, dropped) = Block::from_columns(&self.measure, nodes.to_vec(), cols);
            (b.map(Arc::new), dropped)
        };
        self.blocks.insert(cell.clone(), built.clone());
        built
    }

    pub fn build(&mut self, partition: &Arc<DyadicPartition>) -> Result<PolySpace> {
        if partition.dim() != self.measure.dim() {
            return structure("partition and measure dimensions differ");
        }
        let mut blocks = Vec::new();
        let mut empty_cells = Vec::new();
        let mut dropped = 0;
        for (c, cell) in partition.cells().iter().enumerate() {
            let (block, lost) = self.block(cell);
            dropped += lost;
            match block {
                Some(b) => blocks.push(b),
                None => empty_cells.push(c),
            }
        }
        let nominal_dim = partition.len() * (self.degree + 1).pow(partition.dim() as u32);
        let realized: usize = blocks.iter().map(|b| b.width()).sum();
        let id = format!("pp{}{}", self.degree, partition.label());
        let mut model = LinearModel::from_blocks(id, self.measure.clone(), blocks, realized, 0.0);
        model.set_dropped(dropped);
        Ok(PolySpace { partition: partition.clone(), degree: self.degree, model, nominal_dim, empty_cells })
    }
}

pub fn build_poly_space(partition: &DyadicPartition, r: usize, measure: &Arc<DesignMeasure>) -> Result<PolySpace> {
    PolySpaceBuilder::new(measure.clone(), r)?.build(&Arc::new(partition.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorScheme {
    /// `Δ = (c + 1)(D + 1)` with `c = max_D log(count(D)) / (D + 1)`.
    PaperC,
    /// `Δ = log(count(D)) + D`.
    #[default]
    ExactCount,
}

/// Complexity weights for models indexed by their number of cells.
pub fn prior_deltas(cell_counts: &[usize], scheme: PriorScheme) -> Result<Vec<f64>> {
    if cell_counts.is_empty() {
        return domain("prior needs a nonempty collection");
    }
    if cell_counts.contains(&0) {
        return domain("cell counts must be positive");
    }
    let mut by_cells: HashMap<usize, usize> = HashMap::new();
    for &d in cell_counts {
        *by_cells.entry(d).or_default() += 1;
    }
    let deltas: Vec<f64> = match scheme {
        PriorScheme::ExactCount => cell_counts.iter().map(|d| (by_cells[d] as f64).ln() + *d as f64).collect(),
        PriorScheme::PaperC => {
            let c = by_cells.iter().map(|(d, n)| (*n as f64).ln() / (*d + 1) as f64).fold(0.0, f64::max);
            cell_counts.iter().map(|d| (c + 1.0) * (*d + 1) as f64).collect()
        }
    };
    let sum = kraft_sum(deltas.iter().copied());
    if sum > 1.0 + KRAFT_TOL {
        return Err(Error::Kraft { sum });
    }
    Ok(deltas)
}

pub fn assign_priors(collection: &mut [PolySpace], scheme: PriorScheme) -> Result<()> {
    let cells: Vec<usize> = collection.iter().map(|s| s.cells()).collect();
    let deltas = prior_deltas(&cells, scheme)?;
    for (s, d) in collection.iter_mut().zip(deltas) {
        s.model = s.model.clone().with_delta(d);
    }
    Ok(())
}

/// `Σ e^{-Δ}` over a collection of polynomial spaces.
pub fn kraft_sum_spaces(collection: &[PolySpace]) -> f64 {
    kraft_sum(collection.iter().map(|s| s.delta()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxError {
    pub value: f64,
    /// Set for the sup norm, where the L2 projection only bounds the best
    /// error from above.
    pub upper_bound: bool,
}

pub fn best_approx_error(target: &GridFunction, space: &LinearModel, norm: Lp) -> Result<ApproxError> {
    let fitted = space.project(target)?;
    let residual = target.sub(&fitted)?;
    match norm {
        Lp::L2 => Ok(ApproxError { value: residual.lp_norm(Lp::L2), upper_bound: false }),
        Lp::Inf => Ok(ApproxError { value: residual.lp_norm(Lp::Inf), upper_bound: true }),
        Lp::L1 => domain("best approximation error is defined for L2 and sup norms only"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_censuses() {
        assert_eq!(enumerate_partitions(1, 1).unwrap().partitions.len(), 1);
        assert_eq!(enumerate_partitions(1, 2).unwrap().partitions.len(), 2);
        assert_eq!(enumerate_partitions(2, 2).unwrap().partitions.len(), 3);
    }

    #[test]
    fn catalan_counts_in_one_dimension() {
        let census = enumerate_partitions(1, 8).unwrap();
        assert_eq!(&census.counts[1..], &[1, 1, 2, 5, 14, 42, 132, 429]);
        for (d, &c) in census.counts.iter().enumerate().skip(1) {
            assert!((c as f64) <= (census.c_estimate * (d + 1) as f64).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn two_dimensional_three_cells() {
        // Root split on either axis, then either child on either axis, minus
        // nothing: 2 * 2 * 2 = 8 distinct partitions.
        let census = enumerate_partitions(2, 3).unwrap();
        assert_eq!(census.count(3), 8);
    }

    #[test]
    fn cap_is_enforced() {
        let limits = PartitionLimits { cell_budget: 12, max_level: None, cap: 1000 };
        match enumerate_partitions_with(1, limits) {
            Err(Error::Budget { value, .. }) => assert!(value > 1000.0),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn partitions_tile() {
        let census = enumerate_partitions(2, 5).unwrap();
        let m = DesignMeasure::monte_carlo(2, 300, 3).unwrap();
        for p in &census.partitions {
            let vol: f64 = p.cells().iter().map(|c| c.volume()).sum();
            assert_abs_diff_eq!(vol, 1.0, epsilon = 1e-12);
            for x in m.nodes() {
                assert_eq!(p.cells().iter().filter(|c| c.contains(x)).count(), 1);
            }
        }
        let corner = [1.0, 1.0];
        assert!(census.partitions.iter().all(|p| p.locate(&corner).is_some()));
    }

    #[test]
    fn regular_grids() {
        let grids = regular_partitions(2, 2);
        assert_eq!(grids.len(), 9);
        assert_eq!(grids.iter().map(|g| g.len()).max(), Some(16));
    }

    #[test]
    fn poly_space_dimensions() {
        let m = Arc::new(DesignMeasure::lebesgue(1).unwrap());
        let root = DyadicPartition::root(1);
        let s = build_poly_space(&root, 0, &m).unwrap();
        assert_eq!(s.model.dim(), 1);
        let halves = DyadicPartition::regular(&[1]);
        let s = build_poly_space(&halves, 0, &m).unwrap();
        assert_eq!(s.model.dim(), 2);
        s.model.check_orthonormal().unwrap();
        let m2 = Arc::new(DesignMeasure::lebesgue(2).unwrap());
        let s = build_poly_space(&DyadicPartition::root(2), 1, &m2).unwrap();
        assert_eq!(s.model.dim(), 4);
        assert_eq!(s.nominal_dim, 4);
        s.model.check_orthonormal().unwrap();
    }

    #[test]
    fn empty_cells_are_reported() {
        let m = Arc::new(DesignMeasure::empirical(1, &[vec![-0.5], vec![-0.2], vec![-0.9]]).unwrap());
        let s = build_poly_space(&DyadicPartition::regular(&[1]), 0, &m).unwrap();
        assert_eq!(s.model.dim(), 1);
        assert_eq!(s.empty_cells, vec![1]);
        assert_eq!(s.nominal_dim, 2);
    }

    #[test]
    fn priors_and_kraft() {
        let m = Arc::new(DesignMeasure::lebesgue(1).unwrap());
        let mut single = vec![build_poly_space(&DyadicPartition::root(1), 0, &m).unwrap()];
        assign_priors(&mut single, PriorScheme::ExactCount).unwrap();
        assert_abs_diff_eq!(single[0].delta(), 1.0);
        let census = enumerate_partitions(1, 2).unwrap();
        let mut b = PolySpaceBuilder::new(m.clone(), 0).unwrap();
        let mut spaces: Vec<PolySpace> =
            census.partitions.iter().map(|p| b.build(&Arc::new(p.clone())).unwrap()).collect();
        assign_priors(&mut spaces, PriorScheme::ExactCount).unwrap();
        assert_abs_diff_eq!(kraft_sum_spaces(&spaces), (-1f64).exp() + (-2f64).exp(), epsilon = 1e-14);
        assign_priors(&mut spaces, PriorScheme::PaperC).unwrap();
        assert!(kraft_sum_spaces(&spaces) < 1.0);
    }

    #[test]
    fn abs_on_root_constant() {
        let m = Arc::new(DesignMeasure::lebesgue(1).unwrap());
        let s = build_poly_space(&DyadicPartition::root(1), 0, &m).unwrap();
        let target = GridFunction::from_fn(&m, |x| x[0].abs()).unwrap();
        let e = best_approx_error(&target, &s.model, Lp::L2).unwrap();
        assert_abs_diff_eq!(e.value, (1.0f64 / 12.0).sqrt(), epsilon = 1e-3);
        let e = best_approx_error(&target, &s.model, Lp::Inf).unwrap();
        assert!(e.upper_bound);
    }

    #[test]
    fn target_inside_space() {
        let m = Arc::new(DesignMeasure::lebesgue(2).unwrap());
        let s = build_poly_space(&DyadicPartition::regular(&[1, 0]), 2, &m).unwrap();
        let target = GridFunction::from_fn(&m, |x| if x[0] < 0.0 { x[1] * x[1] } else { x[0] * x[1] }).unwrap();
        assert!(best_approx_error(&target, &s.model, Lp::L2).unwrap().value < 1e-10);
    }

    #[test]
    fn legendre_values() {
        let mut out = [0.0; 4];
        legendre(0.5, 3, &mut out);
        assert_abs_diff_eq!(out[2], 0.5 * (3.0 * 0.25 - 1.0));
        assert_abs_diff_eq!(out[3], 0.5 * (5.0 * 0.125 - 1.5));
    }
}
