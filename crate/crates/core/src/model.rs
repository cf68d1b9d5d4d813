//! Linear models as collections of mutually orthogonal basis blocks.
//!
//! A block holds orthonormal columns supported on a subset of the design
//! nodes. Blocks with disjoint supports are orthogonal automatically, so a
//! piecewise space is just the list of its cell blocks, and blocks can be
//! shared between models that have cells in common.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{structure, Error, Result};
use crate::function::{orthonormalize_columns, DesignMeasure, GridFunction, ORTHO_TOL};

static NEXT_BLOCK_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct Block {
    id: u64,
    nodes: Vec<u32>,
    width: usize,
    /// Row-major `nodes.len() × width`.
    basis: Vec<f64>,
}

impl Block {
    /// Orthonormalizes raw columns (values on `nodes`) against the measure
    /// weights restricted to those nodes. Returns `None` when nothing
    /// survives, plus the number of dropped columns.
    pub fn from_columns(measure: &DesignMeasure, nodes: Vec<u32>, columns: Vec<Vec<f64>>) -> (Option<Block>, usize) {
        let requested = columns.len();
        if nodes.is_empty() {
            return (None, requested);
        }
        let weights: Vec<f64> = nodes.iter().map(|&i| measure.weights()[i as usize]).collect();
        let (kept, dropped) = orthonormalize_columns(columns, &weights);
        if kept.is_empty() {
            return (None, dropped.len());
        }
        (Some(Self::from_orthonormal(nodes, kept)), dropped.len())
    }

    /// Wraps columns that are already orthonormal on `nodes`.
    pub fn from_orthonormal(nodes: Vec<u32>, columns: Vec<Vec<f64>>) -> Block {
        let width = columns.len();
        let rows = nodes.len();
        let mut basis = vec![0.0; rows * width];
        for (c, col) in columns.iter().enumerate() {
            for r in 0..rows {
                basis[r * width + c] = col[r];
            }
        }
        Block { id: NEXT_BLOCK_ID.fetch_add(1, Ordering::Relaxed), nodes, width, basis }
    }

    /// Single-column block `1_{cell} / sqrt(μ(cell))`.
    pub fn indicator(measure: &DesignMeasure, nodes: Vec<u32>) -> Option<Block> {
        let mass: f64 = nodes.iter().map(|&i| measure.weights()[i as usize]).sum();
        if nodes.is_empty() || mass <= 0.0 {
            return None;
        }
        let v = 1.0 / mass.sqrt();
        let width = 1;
        let basis = vec![v; nodes.len()];
        Some(Block { id: NEXT_BLOCK_ID.fetch_add(1, Ordering::Relaxed), nodes, width, basis })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.basis[row * self.width + col]
    }

    /// Inner products `<y, q_c>` given pre-weighted responses `wy = w ∘ y`.
    pub fn coefficients(&self, wy: &[f64]) -> Vec<f64> {
        let mut coef = vec![0.0; self.width];
        for (r, &node) in self.nodes.iter().enumerate() {
            let v = wy[node as usize];
            let row = &self.basis[r * self.width..(r + 1) * self.width];
            coef.iter_mut().zip(row).for_each(|(c, b)| *c += b * v);
        }
        coef
    }

    /// Projection energies `Σ_c <y_r, q_c>²` for `reps` response vectors
    /// stored node-major in `wy` (`wy[node * reps + r]`, pre-weighted).
    pub fn energies(&self, wy: &[f64], reps: usize, coef: &mut Vec<f64>, out: &mut [f64]) {
        coef.clear();
        coef.resize(self.width * reps, 0.0);
        for (r, &node) in self.nodes.iter().enumerate() {
            let src = &wy[node as usize * reps..(node as usize + 1) * reps];
            for c in 0..self.width {
                let b = self.basis[r * self.width + c];
                let dst = &mut coef[c * reps..(c + 1) * reps];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += b * s);
            }
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for c in 0..self.width {
            let row = &coef[c * reps..(c + 1) * reps];
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v * v);
        }
    }

    pub fn add_fitted(&self, coef: &[f64], fitted: &mut [f64]) {
        for (r, &node) in self.nodes.iter().enumerate() {
            let row = &self.basis[r * self.width..(r + 1) * self.width];
            fitted[node as usize] += row.iter().zip(coef).map(|(b, c)| b * c).sum::<f64>();
        }
    }
}

/// A finite-dimensional function space with its complexity weight.
#[derive(Debug, Clone)]
pub struct LinearModel {
    id: String,
    measure: Arc<DesignMeasure>,
    blocks: Vec<Arc<Block>>,
    charged_dim: usize,
    delta: f64,
    dropped: usize,
}

impl LinearModel {
    /// Blocks must be mutually orthogonal (disjoint supports, or checked by
    /// the caller).
    pub fn from_blocks(
        id: impl Into<String>,
        measure: Arc<DesignMeasure>,
        blocks: Vec<Arc<Block>>,
        charged_dim: usize,
        delta: f64,
    ) -> LinearModel {
        LinearModel { id: id.into(), measure, blocks, charged_dim, delta, dropped: 0 }
    }

    /// Model spanned by an orthonormal basis; errors when the Gram matrix
    /// deviates from the identity by more than the tolerance.
    pub fn from_orthonormal(id: impl Into<String>, basis: &[GridFunction], delta: f64) -> Result<LinearModel> {
        let Some(first) = basis.first() else {
            return structure("empty basis; use LinearModel::zero for the null space");
        };
        let measure = first.measure().clone();
        let dev = crate::function::gram_deviation(basis)?;
        if dev > ORTHO_TOL {
            return structure(format!("basis is not orthonormal (Gram deviation {dev:.3e})"));
        }
        let nodes = (0..measure.len() as u32).collect();
        let cols = basis.iter().map(|f| f.values().to_vec()).collect();
        let block = Arc::new(Block::from_orthonormal(nodes, cols));
        Ok(LinearModel::from_blocks(id, measure, vec![block], basis.len(), delta))
    }

    /// Model spanned by arbitrary functions; dependent ones are dropped and
    /// counted, and the realized dimension is charged.
    pub fn span(id: impl Into<String>, functions: &[GridFunction], delta: f64) -> Result<LinearModel> {
        let Some(first) = functions.first() else {
            return structure("cannot span an empty list");
        };
        let measure = first.measure().clone();
        for f in functions {
            if !f.measure().same_as(&measure) {
                return structure("functions live on different measures");
            }
        }
        let nodes: Vec<u32> = (0..measure.len() as u32).collect();
        let cols = functions.iter().map(|f| f.values().to_vec()).collect();
        let (block, dropped) = Block::from_columns(&measure, nodes, cols);
        let blocks: Vec<Arc<Block>> = block.into_iter().map(Arc::new).collect();
        let dim = blocks.iter().map(|b| b.width()).sum();
        let mut model = LinearModel::from_blocks(id, measure, blocks, dim, delta);
        model.dropped = dropped;
        Ok(model)
    }

    /// The null space `{0}`.
    pub fn zero(id: impl Into<String>, measure: Arc<DesignMeasure>, delta: f64) -> LinearModel {
        LinearModel::from_blocks(id, measure, Vec::new(), 0, delta)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn measure(&self) -> &Arc<DesignMeasure> {
        &self.measure
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    /// Realized dimension on the measure.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.width()).sum()
    }

    /// Dimension charged in penalties; at least the realized one for
    /// composed models where rank may drop.
    pub fn charged_dim(&self) -> usize {
        self.charged_dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Basis functions lost to empty cells or rank deficiency.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn set_dropped(&mut self, dropped: usize) {
        self.dropped = dropped;
    }

    pub fn with_delta(mut self, delta: f64) -> LinearModel {
        self.delta = delta;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> LinearModel {
        self.id = id.into();
        self
    }

    /// `(𝒟 ∨ 1) + Δ`, the quantity multiplied by `κτ` in the criterion.
    pub fn penalty_units(&self) -> f64 {
        self.charged_dim.max(1) as f64 + self.delta
    }

    /// Dense orthonormal basis, one function per column.
    pub fn basis_functions(&self) -> Vec<GridFunction> {
        let n = self.measure.len();
        let mut out = Vec::with_capacity(self.dim());
        for block in &self.blocks {
            for c in 0..block.width() {
                let mut values = vec![0.0; n];
                for (r, &node) in block.nodes().iter().enumerate() {
                    values[node as usize] = block.value(r, c);
                }
                out.push(GridFunction::new(self.measure.clone(), values).expect("block values are finite"));
            }
        }
        out
    }

    /// Largest deviation of the full Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        crate::function::gram_deviation(&self.basis_functions()).unwrap_or(f64::INFINITY)
    }

    pub fn check_orthonormal(&self) -> Result<()> {
        let dev = self.orthonormality_error();
        if dev > ORTHO_TOL {
            return structure(format!("model {} is not orthonormal (Gram deviation {dev:.3e})", self.id));
        }
        Ok(())
    }

    /// Coefficients (block by block) and fitted values of the orthogonal
    /// projection of `values`.
    pub fn project_values(&self, values: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if values.len() != self.measure.len() {
            return structure(format!("{} values for a model on {} nodes", values.len(), self.measure.len()));
        }
        let wy: Vec<f64> = values.iter().zip(self.measure.weights()).map(|(v, w)| v * w).collect();
        let mut coefficients = Vec::with_capacity(self.dim());
        let mut fitted = vec![0.0; values.len()];
        for block in &self.blocks {
            let coef = block.coefficients(&wy);
            block.add_fitted(&coef, &mut fitted);
            coefficients.extend(coef);
        }
        Ok((coefficients, fitted))
    }

    pub fn project(&self, f: &GridFunction) -> Result<GridFunction> {
        if !f.measure().same_as(&self.measure) {
            return structure("function and model live on different measures");
        }
        let (_, fitted) = self.project_values(f.values())?;
        GridFunction::new(self.measure.clone(), fitted)
    }

    /// Function with the given coefficients in this model's basis order.
    pub fn combine(&self, coefficients: &[f64]) -> Result<GridFunction> {
        if coefficients.len() != self.dim() {
            return Err(Error::Structure(format!("{} coefficients for dimension {}", coefficients.len(), self.dim())));
        }
        let mut values = vec![0.0; self.measure.len()];
        let mut at = 0;
        for block in &self.blocks {
            block.add_fitted(&coefficients[at..at + block.width()], &mut values);
            at += block.width();
        }
        GridFunction::new(self.measure.clone(), values)
    }
}

/// `Σ e^{-Δ}` over a collection of complexity weights.
pub fn kraft_sum<I: IntoIterator<Item = f64>>(deltas: I) -> f64 {
    deltas.into_iter().map(|d| (-d).exp()).sum()
}

/// Upper bound on the Kraft sum of a stream, computed by its generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KraftCertificate {
    pub sum: f64,
    pub models: usize,
}

/// Tolerance used for every Kraft gate.
pub const KRAFT_TOL: f64 = 1e-12;

impl KraftCertificate {
    pub fn new(sum: f64, models: usize) -> Result<KraftCertificate> {
        if !(sum.is_finite() && sum <= 1.0 + KRAFT_TOL) {
            return Err(Error::Kraft { sum });
        }
        Ok(KraftCertificate { sum, models })
    }

    pub fn from_deltas(deltas: &[f64]) -> Result<KraftCertificate> {
        KraftCertificate::new(kraft_sum(deltas.iter().copied()), deltas.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::Lp;

    #[test]
    fn span_and_project() {
        let m = Arc::new(DesignMeasure::linspace(101).unwrap());
        let one = GridFunction::constant(&m, 1.0).unwrap();
        let x = GridFunction::from_fn(&m, |p| p[0]).unwrap();
        let two = GridFunction::constant(&m, 2.0).unwrap();
        let model = LinearModel::span("lin", &[one, x.clone(), two], 0.0).unwrap();
        assert_eq!(model.dim(), 2);
        assert_eq!(model.dropped(), 1);
        model.check_orthonormal().unwrap();
        let p = model.project(&x).unwrap();
        assert!(p.distance(&x, Lp::Inf).unwrap() < 1e-12);
    }

    #[test]
    fn non_orthonormal_rejected() {
        let m = Arc::new(DesignMeasure::linspace(11).unwrap());
        let f = GridFunction::constant(&m, 2.0).unwrap();
        assert!(LinearModel::from_orthonormal("bad", &[f], 0.0).is_err());
    }

    #[test]
    fn block_energies_match_coefficients() {
        let m = DesignMeasure::linspace(21).unwrap();
        let nodes: Vec<u32> = (5..15).collect();
        let cols = vec![vec![1.0; 10], (0..10).map(|i| i as f64).collect()];
        let (block, dropped) = Block::from_columns(&m, nodes, cols);
        let block = block.unwrap();
        assert_eq!(dropped, 0);
        let y1: Vec<f64> = (0..21).map(|i| (i as f64 * 0.3).sin()).collect();
        let y2: Vec<f64> = (0..21).map(|i| (i as f64 * 0.7).cos()).collect();
        let w = m.weights();
        let mut wy = vec![0.0; 42];
        for i in 0..21 {
            wy[2 * i] = w[i] * y1[i];
            wy[2 * i + 1] = w[i] * y2[i];
        }
        let mut scratch = Vec::new();
        let mut out = [0.0; 2];
        block.energies(&wy, 2, &mut scratch, &mut out);
        for (r, y) in [y1, y2].iter().enumerate() {
            let wy1: Vec<f64> = y.iter().zip(w).map(|(a, b)| a * b).collect();
            let e: f64 = block.coefficients(&wy1).iter().map(|c| c * c).sum();
            assert!((e - out[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn kraft_certificate_gate() {
        assert!(KraftCertificate::new(1.0, 3).is_ok());
        assert!(KraftCertificate::new(1.0 + 1e-9, 3).is_err());
        assert_eq!(kraft_sum(Vec::<f64>::new()), 0.0);
    }
}
