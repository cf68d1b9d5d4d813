//! Experiment harness: synthetic fixed-design regression, risk estimation
//! over replications, slope fits and CSV/JSON tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{domain, Error, Result};
use crate::families::{family_stream, FamilyConfig};
use crate::function::{DesignMeasure, GridFunction};
use crate::selector::{oracle_tradeoff, select_batch, RegressionData, SelectOptions, SelectionResult, DEFAULT_MAX_MODELS};

pub const SCHEMA_VERSION: u32 = 1;

/// How design points are drawn for a given `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignSpec {
    /// Uniform on `[-1,1]^k`.
    Uniform { k: usize },
    /// Midpoints of `n` equal intervals of `[-1,1]`.
    Grid,
    /// Uniform in the unit Euclidean ball of `R^k`.
    Ball { k: usize },
    /// `a·direction + spread·noise`, kept inside the unit ball.
    NearLine { direction: Vec<f64>, spread: f64 },
}

impl DesignSpec {
    pub fn dim(&self) -> usize {
        match self {
            DesignSpec::Uniform { k } | DesignSpec::Ball { k } => *k,
            DesignSpec::Grid => 1,
            DesignSpec::NearLine { direction, .. } => direction.len(),
        }
    }

    pub fn build(&self, n: usize, seed: u64) -> Result<Arc<DesignMeasure>> {
        if n == 0 {
            return domain("design needs at least one point");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, n as u64, u64::MAX));
        let k = self.dim();
        let mut nodes = Vec::with_capacity(n * k);
        match self {
            DesignSpec::Uniform { .. } => {
                for _ in 0..n * k {
                    nodes.push(rng.random_range(-1.0..=1.0));
                }
            }
            DesignSpec::Grid => nodes.extend((0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64)),
            DesignSpec::Ball { .. } => {
                for _ in 0..n {
                    nodes.extend(ball_point(k, 1.0, &mut rng));
                }
            }
            DesignSpec::NearLine { direction, spread } => {
                let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) || !(*spread >= 0.0) {
                    return domain("near-line design needs a nonzero direction and a nonnegative spread");
                }
                let mut kept = 0;
                while kept < n {
                    let a: f64 = rng.random_range(-0.9..=0.9);
                    let p: Vec<f64> = direction
                        .iter()
                        .map(|d| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            a * d / norm + spread * z
                        })
                        .collect();
                    if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                        nodes.extend(p);
                        kept += 1;
                    }
                }
            }
        }
        Ok(Arc::new(DesignMeasure::empirical_flat(k, nodes)?))
    }
}

fn ball_point<R: Rng>(k: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / k as f64);
    v.into_iter().map(|x| x * r / norm).collect()
}

/// Univariate outer functions for synthetic truths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OuterFn {
    Identity,
    Abs,
    Square,
    Sin { frequency: f64 },
    Step { at: f64 },
}

impl OuterFn {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            OuterFn::Identity => y,
            OuterFn::Abs => y.abs(),
            OuterFn::Square => y * y,
            OuterFn::Sin { frequency } => (frequency * y).sin(),
            OuterFn::Step { at } => f64::from(u8::from(y >= at)),
        }
    }
}

/// Regression function `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    Constant { value: f64 },
    /// `Σ_j c_j x_0^j`.
    Polynomial { coefficients: Vec<f64> },
    /// `scale · g(<θ, x>)`.
    SingleIndex {
        theta: Vec<f64>,
        outer: OuterFn,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// `scale · g(x_axis)`.
    Coordinate {
        axis: usize,
        outer: OuterFn,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl TruthSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TruthSpec::Constant { value } => *value,
            TruthSpec::Polynomial { coefficients } => coefficients.iter().rev().fold(0.0, |acc, c| acc * x[0] + c),
            TruthSpec::SingleIndex { theta, outer, scale } => {
                scale * outer.eval(theta.iter().zip(x).map(|(a, b)| a * b).sum())
            }
            TruthSpec::Coordinate { axis, outer, scale } => scale * outer.eval(x[*axis]),
        }
    }

    pub fn on(&self, design: &Arc<DesignMeasure>) -> Result<GridFunction> {
        let k = design.dim();
        let ok = match self {
            TruthSpec::SingleIndex { theta, .. } => theta.len() == k,
            TruthSpec::Coordinate { axis, .. } => *axis < k,
            _ => true,
        };
        if !ok {
            return Err(Error::Config(format!("truth does not match the design dimension {k}")));
        }
        GridFunction::from_fn(design, |x| self.eval(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFamily {
    pub name: String,
    #[serde(flatten)]
    pub config: FamilyConfig,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_n_grid() -> Vec<usize> {
    vec![100, 200, 400, 800, 1600]
}
fn default_reps() -> usize {
    50
}
fn default_sigma() -> f64 {
    1.0
}
fn default_max_models() -> usize {
    DEFAULT_MAX_MODELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub design: DesignSpec,
    pub truth: TruthSpec,
    pub families: Vec<NamedFamily>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Overrides every family's κ when set.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_models")]
    pub max_models: usize,
    /// Also compute `min_S {bias² + τ((𝒟∨1) + Δ)}` per family and `n`.
    #[serde(default)]
    pub oracle: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return bad("unsupported schema_version");
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return bad("n_grid must be positive and strictly increasing");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and nonnegative");
        }
        if self.families.is_empty() {
            return bad("at least one family is required");
        }
        for f in &self.families {
            f.config.validate()?;
            if f.config.k != self.design.dim() {
                return Err(Error::Config(format!("family {} has k={}, design has {}", f.name, f.config.k, self.design.dim())));
            }
        }
        Ok(())
    }
}

/// Seed of the substream for `(n, rep)` under a master seed.
pub fn substream(seed: u64, n: u64, rep: u64) -> u64 {
    let mut h = seed ^ 0x6a09_e667_f3bc_c909;
    for v in [n, rep] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Standard normal draws for replication `rep` at sample size `n`.
pub fn noise_draws(seed: u64, n: usize, rep: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, n as u64, rep as u64));
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// FNV-1a over the bit patterns of a draw vector.
pub fn draw_checksum(draws: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in draws {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub family: String,
    pub n: usize,
    pub mean_risk: f64,
    pub stderr: f64,
    pub replications: usize,
    pub mean_dim: f64,
    pub models: usize,
    /// `min_S {bias² + τ((𝒟∨1) + Δ)}` when requested.
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionCount {
    pub family: String,
    pub n: usize,
    pub model: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub family: String,
    pub slope: f64,
    pub stderr: f64,
    /// 95% Student-t half-width.
    pub half_width: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub n: usize,
    pub replication: usize,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub schema_version: u32,
    pub risks: Vec<RiskRow>,
    pub selections: Vec<SelectionCount>,
    pub slopes: Vec<SlopeRow>,
    pub noise: Vec<NoiseRow>,
}

impl RiskReport {
    pub fn risk(&self, family: &str, n: usize) -> Option<&RiskRow> {
        self.risks.iter().find(|r| r.family == family && r.n == n)
    }

    pub fn slope(&self, family: &str) -> Option<&SlopeRow> {
        self.slopes.iter().find(|r| r.family == family)
    }

    /// Writes `risks.csv`, `selections.csv`, `slopes.csv`, `noise.csv` and
    /// `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&self.risks, fs::File::create(dir.join("risks.csv"))?)?;
        write_csv(&self.selections, fs::File::create(dir.join("selections.csv"))?)?;
        write_csv(&self.slopes, fs::File::create(dir.join("slopes.csv"))?)?;
        write_csv(&self.noise, fs::File::create(dir.join("noise.csv"))?)?;
        serde_json::to_writer_pretty(fs::File::create(dir.join("report.json"))?, self)?;
        Ok(())
    }
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Ordinary least-squares line through `(x, y)` points.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let m = points.len();
    if m < 3 {
        return domain("slope fit needs at least 3 points");
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return domain("slope fit needs finite points");
    }
    let mf = m as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / mf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / mf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if !(sxx > 1e-12 * (1.0 + mx * mx)) {
        return domain("abscissae are degenerate");
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (sse / (mf - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr })
}

fn t_quantile(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::NAN)
}

/// One selection per family on replication `rep` at sample size `n`, with
/// full criterion tables.
pub fn select_once(cfg: &ExperimentConfig, n: usize, rep: usize) -> Result<Vec<(String, SelectionResult)>> {
    cfg.validate()?;
    let design = cfg.design.build(n, cfg.seed)?;
    let truth = cfg.truth.on(&design)?;
    let eps = noise_draws(cfg.seed, n, rep);
    let y = truth.values().iter().zip(&eps).map(|(s, e)| s + cfg.sigma * e).collect();
    let data = [RegressionData::new(design.clone(), y, cfg.sigma)?];
    cfg.families
        .iter()
        .map(|fam| {
            let opts = SelectOptions { kappa: cfg.kappa.unwrap_or(fam.config.kappa), max_models: cfg.max_models, keep_table: true };
            let mut results = select_batch(family_stream(&fam.config, &design)?, &data, opts)?;
            Ok((fam.name.clone(), results.remove(0)))
        })
        .collect()
}

/// Runs every family on identical noise draws for each `n` and
/// replication, and summarizes the empirical risks `‖s - ŝ‖²_n`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RiskReport> {
    cfg.validate()?;
    let mut risks = Vec::new();
    let mut selections = Vec::new();
    let mut noise = Vec::new();
    for &n in &cfg.n_grid {
        let design = cfg.design.build(n, cfg.seed)?;
        let truth = cfg.truth.on(&design)?;
        let mut data = Vec::with_capacity(cfg.replications);
        for rep in 0..cfg.replications {
            let eps = noise_draws(cfg.seed, n, rep);
            noise.push(NoiseRow { n, replication: rep, checksum: format!("{:016x}", draw_checksum(&eps)) });
            let y = truth.values().iter().zip(&eps).map(|(s, e)| s + cfg.sigma * e).collect();
            data.push(RegressionData::new(design.clone(), y, cfg.sigma)?);
        }
        for fam in &cfg.families {
            let kappa = cfg.kappa.unwrap_or(fam.config.kappa);
            let opts = SelectOptions { kappa, max_models: cfg.max_models, keep_table: false };
            let context = |e: Error| Error::Config(format!("family {} at n={n}: {e}", fam.name));
            let stream = family_stream(&fam.config, &design).map_err(context)?;
            let results = select_batch(stream, &data, opts).map_err(context)?;
            let values: Vec<f64> = results.iter().map(|r| truth.distance(&r.fitted, crate::function::Lp::L2).map(|d| d * d)).collect::<Result<_>>()?;
            let reps = values.len() as f64;
            let mean = values.iter().sum::<f64>() / reps;
            let stderr = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0) / reps).sqrt()
            } else {
                0.0
            };
            let mean_dim = results.iter().map(|r| r.chosen.dim() as f64).sum::<f64>() / reps;
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in &results {
                *counts.entry(r.chosen_id().to_string()).or_default() += 1;
            }
            selections.extend(counts.into_iter().map(|(model, count)| SelectionCount { family: fam.name.clone(), n, model, count }));
            let oracle = if cfg.oracle {
                let stream = family_stream(&fam.config, &design).map_err(context)?;
                let tau = cfg.sigma * cfg.sigma / n as f64;
                Some(oracle_tradeoff(stream, &truth, tau, cfg.max_models).map_err(context)?.criterion)
            } else {
                None
            };
            risks.push(RiskRow {
                family: fam.name.clone(),
                n,
                mean_risk: mean,
                stderr,
                replications: cfg.replications,
                mean_dim,
                models: results[0].models_evaluated,
                oracle,
            });
        }
    }
    let mut slopes = Vec::new();
    if cfg.n_grid.len() >= 3 {
        for fam in &cfg.families {
            let points: Vec<(f64, f64)> = risks
                .iter()
                .filter(|r| r.family == fam.name && r.mean_risk > 0.0)
                .map(|r| ((r.n as f64).ln(), r.mean_risk.ln()))
                .collect();
            if let Ok(fit) = slope_fit(&points) {
                slopes.push(SlopeRow {
                    family: fam.name.clone(),
                    slope: fit.slope,
                    stderr: fit.stderr,
                    half_width: t_quantile(points.len() as f64 - 2.0) * fit.stderr,
                    points: points.len(),
                });
            }
        }
    }
    Ok(RiskReport { schema_version: SCHEMA_VERSION, risks, selections, slopes, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilyKind;
    use approx::assert_abs_diff_eq;

    fn constant_config(sigma: f64, reps: usize) -> ExperimentConfig {
        let mut fam = FamilyConfig::new(FamilyKind::NestedPolynomial, 1);
        fam.max_degree = 0;
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            design: DesignSpec::Uniform { k: 1 },
            truth: TruthSpec::Constant { value: 0.7 },
            families: vec![NamedFamily { name: "const".into(), config: fam }],
            n_grid: vec![50, 100, 200],
            replications: reps,
            sigma,
            kappa: None,
            seed: 11,
            max_models: 1000,
            oracle: false,
        }
    }

    #[test]
    fn slope_examples() {
        let line: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 1.0 - 2.0 / 3.0 * i as f64)).collect();
        let fit = slope_fit(&line).unwrap();
        assert_abs_diff_eq!(fit.slope, -2.0 / 3.0, epsilon = 1e-12);
        assert!(fit.stderr < 1e-12);
        let inv: Vec<(f64, f64)> = [100.0f64, 200.0, 400.0, 800.0].iter().map(|n| (n.ln(), (3.0 / n).ln())).collect();
        assert_abs_diff_eq!(slope_fit(&inv).unwrap().slope, -1.0, epsilon = 1e-12);
        assert!(slope_fit(&line[..2]).is_err());
        assert!(slope_fit(&[(1.0, 0.0), (1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn noiseless_truth_in_stream() {
        let report = run_experiment(&constant_config(0.0, 3)).unwrap();
        assert!(report.risks.iter().all(|r| r.mean_risk < 1e-10));
    }

    #[test]
    fn constant_risk_is_variance_of_mean() {
        let report = run_experiment(&constant_config(1.0, 200)).unwrap();
        for r in &report.risks {
            let expected = 1.0 / r.n as f64;
            assert!((r.mean_risk - expected).abs() <= 3.0 * r.stderr, "{r:?}");
        }
    }

    #[test]
    fn paired_noise_and_json() {
        let mut cfg = constant_config(1.0, 2);
        let second = cfg.families[0].clone();
        cfg.families.push(NamedFamily { name: "const2".into(), ..second });
        let report = run_experiment(&cfg).unwrap();
        let a = report.risk("const", 100).unwrap().mean_risk;
        let b = report.risk("const2", 100).unwrap().mean_risk;
        assert_eq!(a, b);
        assert_eq!(report.noise.len(), 6);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = constant_config(1.0, 2);
        cfg.n_grid = vec![100, 50];
        assert!(cfg.validate().is_err());
        let mut cfg = constant_config(1.0, 0);
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }
}
