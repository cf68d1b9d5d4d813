use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use compsel::approx::PriorScheme;
use compsel::bench::{run_experiment, select_once, write_csv, ExperimentConfig};
use compsel::families::{ann_budget, family_stream, pca_decompose, pca_residual_of, write_model_census, FamilyConfig, PartitionScheme};
use compsel::function::{DesignMeasure, GridFunction};
use compsel::gaussians::{distance_table, ParamBounds};
use compsel::model::{kraft_sum, LinearModel};
use compsel::nets::{build_eta_net, clamp_model};
use compsel::verify::{run_suite, CheckOutcome};
use compsel::Error;

#[derive(Parser)]
#[command(name = "compsel", version, about = "Penalized model selection over composite-function model collections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files; tables go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prior {
    ExactCount,
    PaperC,
}

impl From<Prior> for PriorScheme {
    fn from(p: Prior) -> PriorScheme {
        match p {
            Prior::ExactCount => PriorScheme::ExactCount,
            Prior::PaperC => PriorScheme::PaperC,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Partition collection with complexity weights, or the model census of
    /// a family config given by --config.
    Census {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Cell budget of the recursive dyadic partitions.
        #[arg(long, default_value_t = 4)]
        cells: usize,
        #[arg(long)]
        max_level: Option<u32>,
        #[arg(long, value_enum, default_value_t = Prior::ExactCount)]
        prior: Prior,
        /// Design size for a family census.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Builds an η-net of the clamped radius-2 ball of a polynomial model.
    Net {
        /// Model dimension (polynomials of degree < dim on [-1,1]).
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// One selection per family on a single replication of an experiment config.
    Select {
        /// Sample size; defaults to the first entry of the config's n_grid.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Full risk report over the config's n-grid and replications.
    Bench,
    /// Principal axes and projection residuals of a point cloud.
    Pca {
        /// CSV file with one point per row.
        #[arg(long)]
        points: PathBuf,
    },
    /// Hellinger distances and Lipschitz checks between random Gaussians.
    Hellinger {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 1.0)]
        r_max: f64,
        #[arg(long, default_value_t = 0.5)]
        rho_low: f64,
        #[arg(long, default_value_t = 1.5)]
        rho_high: f64,
    },
    /// Width and depth plan for the neural-network inner family.
    AnnBudget {
        #[arg(long = "big-k", default_value_t = 1.0)]
        big_k: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        q_psi: u64,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 1e-4)]
        tau: f64,
    },
    /// Randomized property suite plus checks of the fixture files.
    Verify {
        /// Multiplier on the number of random cases.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Domain(_) | Error::Structure(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Census { dim, cells, max_level, prior, points } => census(cli, *dim, *cells, *max_level, (*prior).into(), *points),
        Command::Net { dim, eta, points } => net(cli, *dim, *eta, *points),
        Command::Select { n, replication } => select(cli, *n, *replication),
        Command::Bench => bench(cli),
        Command::Pca { points } => pca(cli, points),
        Command::Hellinger { k, pairs, r_max, rho_low, rho_high } => hellinger(cli, *k, *pairs, *r_max, *rho_low, *rho_high),
        Command::AnnBudget { big_k, radius, lipschitz, alpha, gamma, q_psi, k, tau } => {
            let plan = ann_budget(*big_k, *radius, *lipschitz, *alpha, *gamma, *q_psi, *k, *tau)?;
            eprintln!("(l*, q*) = ({}, {})", plan.l_star, plan.q_star);
            #[derive(Serialize)]
            struct Row {
                l_star: u64,
                q_star: u64,
                approximation: f64,
                width: f64,
                complexity: f64,
                logarithmic: f64,
                total: f64,
            }
            let t = plan.terms;
            let row = Row {
                l_star: plan.l_star,
                q_star: plan.q_star,
                approximation: t.approximation,
                width: t.width,
                complexity: t.complexity,
                logarithmic: t.logarithmic,
                total: t.total,
            };
            emit(cli, "ann_budget", &[row])
        }
        Command::Verify { scale, fixtures } => verify(cli, *scale, fixtures),
    }
}

/// Writes rows to `--out/<stem>.{csv,json}` or stdout.
fn emit<T: Serialize>(cli: &Cli, stem: &str, rows: &[T]) -> Outcome {
    let mut buf = Vec::new();
    match cli.format {
        Format::Csv => write_csv(rows, &mut buf)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, rows).map_err(Error::from)?;
            buf.push(b'\n');
        }
    }
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let ext = if cli.format == Format::Csv { "csv" } else { "json" };
            fs::write(dir.join(format!("{stem}.{ext}")), buf)?;
        }
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn require_config(cli: &Cli) -> Result<&Path, Failure> {
    cli.config.as_deref().ok_or_else(|| Failure::Usage("this command needs --config <path>".into()))
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(require_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn census(cli: &Cli, dim: usize, cells: usize, max_level: Option<u32>, prior: PriorScheme, points: usize) -> Outcome {
    if let Some(path) = &cli.config {
        let mut cfg: FamilyConfig = serde_json::from_str(&fs::read_to_string(path)?).map_err(Error::from)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let design = Arc::new(DesignMeasure::monte_carlo(cfg.k, points, cfg.seed)?);
        let design = Arc::new(DesignMeasure::empirical_flat(cfg.k, design.flat_nodes().to_vec())?);
        let stream = family_stream(&cfg, &design)?;
        let mut buf = Vec::new();
        let (count, sum) = write_model_census(stream, &mut buf)?;
        eprintln!("{count} models, Kraft sum {sum:.6}");
        return match &cli.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("census.csv"), buf)?;
                Ok(())
            }
            None => Ok(io::stdout().write_all(&buf)?),
        };
    }
    #[derive(Serialize)]
    struct Row {
        partition: String,
        cells: usize,
        delta: f64,
    }
    let scheme = PartitionScheme::Recursive { max_cells: cells, max_level };
    let weighted = scheme.weighted(dim, prior)?;
    let rows: Vec<Row> =
        weighted.iter().map(|(p, delta)| Row { partition: p.label(), cells: p.len(), delta: *delta }).collect();
    eprintln!("{} partitions, Kraft sum {:.6}", rows.len(), kraft_sum(rows.iter().map(|r| r.delta)));
    emit(cli, "census", &rows)
}

fn net(cli: &Cli, dim: usize, eta: f64, points: usize) -> Outcome {
    let measure = Arc::new(DesignMeasure::linspace(points)?);
    let basis = (0..dim)
        .map(|d| GridFunction::from_fn(&measure, |x| x[0].powi(d as i32)))
        .collect::<compsel::Result<Vec<_>>>()?;
    let model = clamp_model(&LinearModel::span(format!("poly{dim}"), &basis, 0.0)?)?;
    let net = build_eta_net(&model, eta, cli.seed.unwrap_or(0))?;
    let sidecar = net.sidecar();
    eprintln!(
        "{} members (bound {:.1}), separation {:.4}, covering radius {:.4}",
        sidecar.cardinality, sidecar.bound, sidecar.separation, sidecar.covering_radius
    );
    let sidecar_json = serde_json::to_string_pretty(&sidecar).map_err(Error::from)?;
    match (&cli.out, cli.format) {
        (Some(dir), _) => {
            fs::create_dir_all(dir)?;
            net.write_csv(fs::File::create(dir.join("net.csv"))?)?;
            fs::write(dir.join("net.json"), sidecar_json)?;
        }
        (None, Format::Csv) => net.write_csv(io::stdout().lock())?,
        (None, Format::Json) => println!("{sidecar_json}"),
    }
    Ok(())
}

fn select(cli: &Cli, n: Option<usize>, replication: usize) -> Outcome {
    let cfg = experiment(cli)?;
    let n = n.unwrap_or(cfg.n_grid[0]);
    let results = select_once(&cfg, n, replication)?;
    #[derive(Serialize)]
    struct Row {
        family: String,
        chosen_model: String,
        dim: usize,
        charged_dim: usize,
        delta: f64,
        rss: f64,
        criterion: f64,
        kappa: f64,
        tau: f64,
        models_evaluated: usize,
        kraft_sum: f64,
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        for (name, r) in &results {
            r.write_table_csv(fs::File::create(dir.join(format!("table_{name}.csv")))?)?;
        }
    }
    let rows: Vec<Row> = results
        .iter()
        .map(|(name, r)| {
            let s = r.summary();
            Row {
                family: name.clone(),
                chosen_model: s.chosen_model,
                dim: s.dim,
                charged_dim: s.charged_dim,
                delta: s.delta,
                rss: s.rss,
                criterion: s.criterion,
                kappa: s.kappa,
                tau: s.tau,
                models_evaluated: s.models_evaluated,
                kraft_sum: s.kraft_sum,
            }
        })
        .collect();
    emit(cli, "selection", &rows)
}

fn bench(cli: &Cli) -> Outcome {
    let cfg = experiment(cli)?;
    let report = run_experiment(&cfg)?;
    for s in &report.slopes {
        eprintln!("{}: slope {:.3} ± {:.3} over {} points", s.family, s.slope, s.half_width, s.points);
    }
    match &cli.out {
        Some(dir) => Ok(report.write_dir(dir)?),
        None => match cli.format {
            Format::Csv => Ok(write_csv(&report.risks, io::stdout().lock())?),
            Format::Json => {
                println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
                Ok(())
            }
        },
    }
}

/// Reads one point per row; a first row that does not parse as numbers is a header.
fn read_points(path: &Path) -> Result<DesignMeasure, Failure> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(Error::from)?;
    let mut dim = None;
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Failure::Usage(format!("row {}: {e}", i + 1))),
        };
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(Failure::Usage(format!("row {} has {} columns, expected {d}", i + 1, row.len()))),
            _ => {}
        }
        flat.extend(row);
    }
    let dim = dim.ok_or_else(|| Failure::Usage(format!("{} holds no points", path.display())))?;
    Ok(DesignMeasure::empirical_flat(dim, flat)?)
}

#[derive(Serialize)]
struct PcaRow {
    l: usize,
    /// `λ_l` for `l ≥ 1`.
    eigenvalue: Option<f64>,
    residual: f64,
}

fn pca_rows(measure: &DesignMeasure) -> Result<Vec<PcaRow>, Failure> {
    let pca = pca_decompose(measure)?;
    (0..=measure.dim())
        .map(|l| {
            let residual = pca_residual_of(measure, &pca, l)?;
            Ok(PcaRow { l, eigenvalue: l.checked_sub(1).map(|j| pca.eigvals[j]), residual })
        })
        .collect()
}

fn pca(cli: &Cli, points: &Path) -> Outcome {
    let measure = read_points(points)?;
    emit(cli, "pca", &pca_rows(&measure)?)
}

fn hellinger(cli: &Cli, k: usize, pairs: usize, r_max: f64, rho_low: f64, rho_high: f64) -> Outcome {
    let bounds = ParamBounds::new(k, r_max, rho_low, rho_high)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let rows = distance_table(&bounds, pairs, &mut rng)?;
    let violations = rows.iter().filter(|r| !r.holds).count();
    eprintln!("{pairs} pairs, {violations} Lipschitz violations");
    emit(cli, "hellinger", &rows)
}

/// Every JSON fixture must load as an experiment config; every CSV fixture
/// must satisfy the PCA residual identity.
fn fixture_checks(dir: &Path) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let Ok(entries) = fs::read_dir(dir) else {
        return out;
    };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        let name = format!("fixture {}", path.file_name().unwrap_or_default().to_string_lossy());
        let result = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ExperimentConfig::load(&path).map(|_| ()).map_err(|e| e.to_string()),
            Some("csv") => match read_points(&path) {
                Ok(m) => pca_rows(&m).map(|_| ()).map_err(|_| "PCA residual identity failed".to_string()),
                Err(Failure::Usage(m) | Failure::Runtime(m)) => Err(m),
                Err(Failure::Verification) => Err("unreadable".into()),
            },
            _ => continue,
        };
        out.push(CheckOutcome {
            name,
            cases: 1,
            failures: usize::from(result.is_err()),
            detail: result.err().unwrap_or_else(|| "ok".into()),
        });
    }
    out
}

fn verify(cli: &Cli, scale: usize, fixtures: &Path) -> Outcome {
    let mut outcomes = run_suite(cli.seed.unwrap_or(0), scale);
    outcomes.extend(fixture_checks(fixtures));
    for o in &outcomes {
        eprintln!("{} {:<34} {:>4} cases  {}", if o.passed() { "PASS" } else { "FAIL" }, o.name, o.cases, o.detail);
    }
    emit(cli, "verify", &outcomes)?;
    if outcomes.iter().all(CheckOutcome::passed) {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}
