//! Penalized least-squares selection over lazily generated model streams.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, structure, Error, Result};
use crate::function::{DesignMeasure, GridFunction, MeasureKind};
use crate::model::{kraft_sum, KraftCertificate, LinearModel, KRAFT_TOL};

pub const DEFAULT_KAPPA: f64 = 3.0;
pub const DEFAULT_MAX_MODELS: usize = 200_000;
/// Cached block energies are dropped once they hold this many floats.
const ENERGY_CACHE_FLOATS: usize = 20_000_000;

/// Fixed-design regression sample `Y_i = s(x_i) + σ ε_i`.
#[derive(Debug, Clone)]
pub struct RegressionData {
    design: Arc<DesignMeasure>,
    responses: Vec<f64>,
    sigma: f64,
    tau: f64,
}

impl RegressionData {
    pub fn new(design: Arc<DesignMeasure>, responses: Vec<f64>, sigma: f64) -> Result<RegressionData> {
        if design.kind() != MeasureKind::EmpiricalDesign {
            return structure("regression needs an empirical design measure");
        }
        if responses.len() != design.len() {
            return structure(format!("{} responses for {} design points", responses.len(), design.len()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return domain("sigma must be a finite nonnegative number");
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return domain("responses must be finite");
        }
        let tau = sigma * sigma / design.len() as f64;
        Ok(RegressionData { design, responses, sigma, tau })
    }

    pub fn design(&self) -> &Arc<DesignMeasure> {
        &self.design
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn squared_norm(&self) -> f64 {
        self.responses.iter().zip(self.design.weights()).map(|(y, w)| w * y * y).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub coefficients: Vec<f64>,
    pub fitted: GridFunction,
    pub rss: f64,
}

/// Least-squares fit of `data` on an orthonormal model.
pub fn fit_projection(model: &LinearModel, data: &RegressionData) -> Result<Fit> {
    if !model.measure().same_as(&data.design) {
        return structure(format!("model {} lives on a different design", model.id()));
    }
    let (coefficients, fitted) = model.project_values(&data.responses)?;
    let rss = data
        .responses
        .iter()
        .zip(&fitted)
        .zip(data.design.weights())
        .map(|((y, f), w)| w * (y - f) * (y - f))
        .sum();
    Ok(Fit { coefficients, fitted: GridFunction::new(model.measure().clone(), fitted)?, rss })
}

/// A lazily generated model collection with an optional Kraft certificate.
pub struct ModelStream {
    iter: Box<dyn Iterator<Item = Result<LinearModel>> + Send>,
    certificate: Option<KraftCertificate>,
}

impl ModelStream {
    pub fn new(iter: impl Iterator<Item = Result<LinearModel>> + Send + 'static, certificate: KraftCertificate) -> ModelStream {
        ModelStream { iter: Box::new(iter), certificate: Some(certificate) }
    }

    /// A stream without a certificate; selection refuses it.
    pub fn uncertified(iter: impl Iterator<Item = Result<LinearModel>> + Send + 'static) -> ModelStream {
        ModelStream { iter: Box::new(iter), certificate: None }
    }

    /// Certifies a materialized collection from its own weights.
    pub fn from_models(models: Vec<LinearModel>) -> Result<ModelStream> {
        let certificate = KraftCertificate::new(kraft_sum(models.iter().map(|m| m.delta())), models.len())?;
        Ok(ModelStream::new(models.into_iter().map(Ok), certificate))
    }

    pub fn certificate(&self) -> Option<KraftCertificate> {
        self.certificate
    }

    /// Materializes the stream (for small collections and tests).
    pub fn collect_models(self) -> Result<Vec<LinearModel>> {
        self.iter.collect()
    }
}

impl Iterator for ModelStream {
    type Item = Result<LinearModel>;

    fn next(&mut self) -> Option<Self::Item> {
        self.iter.next()
    }
}

/// Concatenates streams, adding `Δ_ν(ℓ)` to every model of stream `ℓ`.
pub fn mix_streams(streams: Vec<(ModelStream, f64)>) -> Result<ModelStream> {
    if streams.is_empty() {
        return domain("nothing to mix");
    }
    let nu_sum = kraft_sum(streams.iter().map(|(_, d)| *d));
    if streams.iter().any(|(_, d)| !(*d >= 0.0)) || nu_sum > 1.0 + KRAFT_TOL {
        return Err(Error::Refused(format!("mixing weights sum to {nu_sum}, not a subprobability")));
    }
    let mut sum = 0.0;
    let mut models = 0;
    let mut parts = Vec::with_capacity(streams.len());
    for (stream, delta_nu) in streams {
        let cert = stream.certificate.ok_or_else(|| Error::Refused("mixed stream lacks a Kraft certificate".into()))?;
        sum += (-delta_nu).exp() * cert.sum;
        models += cert.models;
        parts.push(stream.iter.map(move |m| m.map(|m| {
            let delta = m.delta() + delta_nu;
            m.with_delta(delta)
        })));
    }
    Ok(ModelStream::new(parts.into_iter().flatten(), KraftCertificate::new(sum, models)?))
}

#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    pub kappa: f64,
    pub max_models: usize,
    pub keep_table: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions { kappa: DEFAULT_KAPPA, max_models: DEFAULT_MAX_MODELS, keep_table: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub model: String,
    pub dim: usize,
    pub charged_dim: usize,
    pub delta: f64,
    pub rss: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub chosen: LinearModel,
    pub fitted: GridFunction,
    pub rss: f64,
    pub criterion: f64,
    pub kappa: f64,
    pub tau: f64,
    pub models_evaluated: usize,
    pub kraft_sum: f64,
    pub table: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub chosen_model: String,
    pub dim: usize,
    pub charged_dim: usize,
    pub delta: f64,
    pub rss: f64,
    pub criterion: f64,
    pub kappa: f64,
    pub tau: f64,
    pub models_evaluated: usize,
    pub kraft_sum: f64,
}

impl SelectionResult {
    pub fn chosen_id(&self) -> &str {
        self.chosen.id()
    }

    pub fn summary(&self) -> SelectionSummary {
        SelectionSummary {
            chosen_model: self.chosen.id().to_string(),
            dim: self.chosen.dim(),
            charged_dim: self.chosen.charged_dim(),
            delta: self.chosen.delta(),
            rss: self.rss,
            criterion: self.criterion,
            kappa: self.kappa,
            tau: self.tau,
            models_evaluated: self.models_evaluated,
            kraft_sum: self.kraft_sum,
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }

    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.table {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(criterion, Δ, id)` ordering used for every tie-break.
fn better(crit: f64, delta: f64, id: &str, best: &Best) -> bool {
    match crit.partial_cmp(&best.criterion) {
        Some(Ordering::Less) => true,
        Some(Ordering::Equal) => match delta.partial_cmp(&best.model.delta()) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => id < best.model.id(),
            _ => false,
        },
        _ => false,
    }
}

struct Best {
    model: LinearModel,
    criterion: f64,
    rss: f64,
}

/// Minimizes `rss + κ τ ((𝒟∨1) + Δ)` over the stream.
pub fn penalized_select(stream: ModelStream, data: &RegressionData, kappa: f64) -> Result<SelectionResult> {
    let opts = SelectOptions { kappa, ..SelectOptions::default() };
    Ok(select_batch(stream, std::slice::from_ref(data), opts)?.pop().expect("one result per data set"))
}

/// Runs the selection for several response vectors on one design in a
/// single pass over the stream. Block energies are shared between models
/// that reuse blocks.
pub fn select_batch(stream: ModelStream, data: &[RegressionData], opts: SelectOptions) -> Result<Vec<SelectionResult>> {
    let certificate = stream.certificate.ok_or_else(|| Error::Refused("model stream lacks a Kraft certificate".into()))?;
    if !(opts.kappa > 0.0) {
        return domain("kappa must be positive");
    }
    if data.is_empty() {
        return domain("no regression data");
    }
    if certificate.models > opts.max_models {
        return Err(Error::Budget { what: "model count".into(), value: certificate.models as f64, cap: opts.max_models as f64 });
    }
    let design = data[0].design.clone();
    if data.iter().any(|d| !d.design.same_as(&design)) {
        return structure("batch data sets must share one design");
    }
    let reps = data.len();
    let n = design.len();
    let mut wy = vec![0.0; n * reps];
    for (r, d) in data.iter().enumerate() {
        for (i, (y, w)) in d.responses.iter().zip(design.weights()).enumerate() {
            wy[i * reps + r] = w * y;
        }
    }
    let norms: Vec<f64> = data.iter().map(|d| d.squared_norm()).collect();
    let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut cached_floats = 0usize;
    let mut scratch = Vec::new();
    let mut block_energy = vec![0.0; reps];
    let mut energy = vec![0.0; reps];
    let mut best: Vec<Option<Best>> = (0..reps).map(|_| None).collect();
    let mut tables: Vec<Vec<TableRow>> = vec![Vec::new(); reps];
    let mut evaluated = 0usize;
    let mut running_kraft = 0.0;

    for model in stream.iter {
        let model = model?;
        evaluated += 1;
        if evaluated > opts.max_models {
            return Err(Error::Budget { what: "model count".into(), value: evaluated as f64, cap: opts.max_models as f64 });
        }
        running_kraft += (-model.delta()).exp();
        if running_kraft > certificate.sum + KRAFT_TOL.max(certificate.sum * 1e-12) {
            return Err(Error::Kraft { sum: running_kraft });
        }
        if !model.measure().same_as(&design) {
            return structure(format!("model {} lives on a different design", model.id()));
        }
        energy.iter_mut().for_each(|e| *e = 0.0);
        for block in model.blocks() {
            if let Some(cached) = cache.get(&block.id()) {
                energy.iter_mut().zip(cached).for_each(|(e, c)| *e += c);
                continue;
            }
            block.energies(&wy, reps, &mut scratch, &mut block_energy);
            energy.iter_mut().zip(&block_energy).for_each(|(e, c)| *e += c);
            if cached_floats + reps > ENERGY_CACHE_FLOATS {
                cache.clear();
                cached_floats = 0;
            }
            cache.insert(block.id(), block_energy.clone());
            cached_floats += reps;
        }
        let units = model.penalty_units();
        for r in 0..reps {
            let rss = (norms[r] - energy[r]).max(0.0);
            let crit = rss + opts.kappa * data[r].tau * units;
            if opts.keep_table {
                tables[r].push(TableRow {
                    model: model.id().to_string(),
                    dim: model.dim(),
                    charged_dim: model.charged_dim(),
                    delta: model.delta(),
                    rss,
                    criterion: crit,
                });
            }
            let replace = match &best[r] {
                None => true,
                Some(b) => better(crit, model.delta(), model.id(), b),
            };
            if replace {
                best[r] = Some(Best { model: model.clone(), criterion: crit, rss });
            }
        }
    }
    if evaluated == 0 {
        return domain("empty model stream");
    }
    let mut results = Vec::with_capacity(reps);
    for (r, (b, table)) in best.into_iter().zip(tables).enumerate() {
        let b = b.expect("nonempty stream");
        let fit = fit_projection(&b.model, &data[r])?;
        results.push(SelectionResult {
            chosen: b.model,
            fitted: fit.fitted,
            rss: b.rss,
            criterion: b.criterion,
            kappa: opts.kappa,
            tau: data[r].tau,
            models_evaluated: evaluated,
            kraft_sum: running_kraft,
            table,
        });
    }
    Ok(results)
}

/// `min_S {‖s - Π_S s‖² + τ((𝒟∨1) + Δ)}`, the oracle trade-off.
pub fn oracle_tradeoff(stream: ModelStream, truth: &GridFunction, tau: f64, max_models: usize) -> Result<SelectionResult> {
    let design = truth.measure().clone();
    let n = design.len() as f64;
    let data = RegressionData::new(design, truth.values().to_vec(), (tau * n).sqrt())?;
    let opts = SelectOptions { kappa: 1.0, max_models, keep_table: false };
    Ok(select_batch(stream, &[data], opts)?.pop().expect("one result"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{DyadicPartition, PolySpaceBuilder};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(n: usize) -> Arc<DesignMeasure> {
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![-1.0 + 2.0 * (i as f64 + 0.5) / n as f64]).collect();
        Arc::new(DesignMeasure::empirical(1, &pts).unwrap())
    }

    fn poly(design: &Arc<DesignMeasure>, degree: usize, delta: f64) -> LinearModel {
        let fs: Vec<GridFunction> = (0..=degree).map(|d| GridFunction::from_fn(design, |x| x[0].powi(d as i32)).unwrap()).collect();
        LinearModel::span(format!("deg{degree}"), &fs, delta).unwrap()
    }

    #[test]
    fn fit_in_span_is_exact() {
        let m = design(50);
        let model = poly(&m, 2, 1.0);
        let y: Vec<f64> = m.nodes().map(|x| 1.0 - x[0] + 3.0 * x[0] * x[0]).collect();
        let fit = fit_projection(&model, &RegressionData::new(m, y, 0.0).unwrap()).unwrap();
        assert!(fit.rss < 1e-24);
    }

    #[test]
    fn constant_fit_is_mean() {
        let m = design(7);
        let y = vec![1.0, 5.0, 2.0, 2.0, 9.0, -3.0, 0.5];
        let mean = y.iter().sum::<f64>() / 7.0;
        let fit = fit_projection(&poly(&m, 0, 1.0), &RegressionData::new(m, y, 1.0).unwrap()).unwrap();
        fit.fitted.values().iter().for_each(|v| assert_abs_diff_eq!(*v, mean, epsilon = 1e-12));
    }

    #[test]
    fn nested_rss_nonincreasing() {
        let m = design(40);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let data = RegressionData::new(m.clone(), y, 1.0).unwrap();
        let rss: Vec<f64> = (0..5).map(|d| fit_projection(&poly(&m, d, 1.0), &data).unwrap().rss).collect();
        assert!(rss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn refuses_uncertified_and_empty() {
        let m = design(10);
        let data = RegressionData::new(m.clone(), vec![0.0; 10], 1.0).unwrap();
        let s = ModelStream::uncertified(vec![Ok(poly(&m, 0, 1.0))].into_iter());
        assert!(matches!(penalized_select(s, &data, 3.0), Err(Error::Refused(_))));
        let s = ModelStream::from_models(Vec::new()).unwrap();
        assert!(matches!(penalized_select(s, &data, 3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn lying_certificate_caught() {
        let m = design(10);
        let data = RegressionData::new(m.clone(), vec![0.0; 10], 1.0).unwrap();
        let models = vec![Ok(poly(&m, 0, 0.0)), Ok(poly(&m, 1, 0.0))];
        let s = ModelStream::new(models.into_iter(), KraftCertificate::new(1.0, 2).unwrap());
        assert!(matches!(penalized_select(s, &data, 3.0), Err(Error::Kraft { .. })));
    }

    #[test]
    fn budget_enforced() {
        let m = design(10);
        let data = RegressionData::new(m.clone(), vec![0.0; 10], 1.0).unwrap();
        let s = ModelStream::from_models((0..3).map(|d| poly(&m, d, 2.0)).collect()).unwrap();
        let opts = SelectOptions { max_models: 2, ..SelectOptions::default() };
        assert!(matches!(select_batch(s, &[data], opts), Err(Error::Budget { .. })));
    }

    #[test]
    fn criterion_matches_table_min_and_ties() {
        let m = design(30);
        let y: Vec<f64> = m.nodes().map(|x| x[0]).collect();
        let data = RegressionData::new(m.clone(), y, 0.0).unwrap();
        let a = poly(&m, 1, 2.0).with_id("b");
        let b = poly(&m, 1, 2.0).with_id("a");
        let res = penalized_select(ModelStream::from_models(vec![a, b]).unwrap(), &data, 3.0).unwrap();
        assert_eq!(res.chosen_id(), "a");
        let min = res.table.iter().map(|r| r.criterion).fold(f64::INFINITY, f64::min);
        assert_eq!(res.criterion, min);
    }

    #[test]
    fn batch_matches_single() {
        let m = design(60);
        let mut pb = PolySpaceBuilder::new(m.clone(), 1).unwrap();
        let spaces: Vec<LinearModel> = (0..4)
            .map(|l| pb.build(&Arc::new(DyadicPartition::regular(&[l]))).unwrap().model.with_delta(l as f64 + 1.0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<RegressionData> = (0..5)
            .map(|_| {
                let y = m.nodes().map(|x| x[0].abs() + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
                RegressionData::new(m.clone(), y, 0.3).unwrap()
            })
            .collect();
        let batch = select_batch(ModelStream::from_models(spaces.clone()).unwrap(), &data, SelectOptions::default()).unwrap();
        for (d, b) in data.iter().zip(&batch) {
            let single = penalized_select(ModelStream::from_models(spaces.clone()).unwrap(), d, 3.0).unwrap();
            assert_eq!(single.chosen_id(), b.chosen_id());
            assert_eq!(single.table, b.table);
            let direct = fit_projection(&single.chosen, d).unwrap().rss;
            assert_abs_diff_eq!(direct, single.rss, epsilon = 1e-10);
        }
    }

    #[test]
    fn mixing_shifts_deltas() {
        let m = design(10);
        let s1 = ModelStream::from_models(vec![poly(&m, 0, 1.0)]).unwrap();
        let s2 = ModelStream::from_models(vec![poly(&m, 1, 1.0)]).unwrap();
        let nu = |l: f64| (2.0 * l * l).ln();
        let mixed = mix_streams(vec![(s1, nu(1.0)), (s2, nu(2.0))]).unwrap();
        let cert = mixed.certificate().unwrap();
        let models = mixed.collect_models().unwrap();
        assert_abs_diff_eq!(models[0].delta(), 1.0 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(models[1].delta(), 1.0 + 8f64.ln(), epsilon = 1e-12);
        assert!(kraft_sum(models.iter().map(|m| m.delta())) <= cert.sum + 1e-12);
        let s = ModelStream::from_models(vec![poly(&m, 0, 1.0)]).unwrap();
        let s2 = ModelStream::from_models(vec![poly(&m, 0, 1.0)]).unwrap();
        assert!(matches!(mix_streams(vec![(s, 0.0), (s2, 0.0)]), Err(Error::Refused(_))));
    }
}
