//! `endotree` — analysis pipeline for finite recursive tree processes.
//!
//! Exit codes: 0 success (or decided verdict), 1 internal failure or failed
//! check, 2 invalid input, 3 indeterminate verdict, 4 resource cap.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use endotree::endogeny::{self, ClassifyOptions, Decision};
use endotree::kernels::{self, PairMeasure};
use endotree::model::{self, Tolerances, ValidationReport};
use endotree::montecarlo::{self, RngStream};
use endotree::oracle;
use endotree::spectral::SpectralData;
use endotree::superop::{self, GeneratorQ, Superops};
use endotree::{Error, Kernel, Model, Spectral};

#[derive(Parser)]
#[command(
    name = "endotree",
    version,
    about = "Endogeny analysis for recursive tree processes"
)]
struct Cli {
    /// Worker threads (defaults to ENDOTREE_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelSource {
    /// Path to a model file in the canonical JSON format.
    model: Option<PathBuf>,
    /// Name of a builtin model (SELECT, CONST, PURE-INNOVATION, XOR, ANDOR,
    /// ANDOR-NOISE) instead of a file.
    #[arg(long)]
    builtin: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DynamicsKind {
    /// Unit-rate leaf refresh dynamics.
    Refresh,
    /// Slowed leaf-jump dynamics driven by the Perron generator.
    Qn,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model and print the report.
    Validate {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Full pipeline: kernels, Perron data, endogeny verdict.
    Analyze {
        #[command(flatten)]
        source: ModelSource,
        /// Largest innovation depth for the critical-case coercivity check.
        #[arg(long, default_value_t = 3)]
        mmax: usize,
        /// Add a bivariate-iteration section with this many random starts.
        #[arg(long, default_value_t = 0)]
        bivariate: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Include wall-clock timings (makes the report non-reproducible).
        #[arg(long)]
        timings: bool,
        /// Write the two-point kernel as CSV (pair labels on both axes).
        #[arg(long)]
        kernel_csv: Option<PathBuf>,
    },
    /// Off-diagonal mass traces of the bivariate iteration, as CSV.
    Bivariate {
        #[command(flatten)]
        source: ModelSource,
        /// Number of starts: the product coupling plus random couplings.
        #[arg(long, default_value_t = 5)]
        starts: usize,
        /// Iteration steps per start.
        #[arg(long, default_value_t = 60)]
        n: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectral-measure table of a root observable, as CSV.
    Spectrum {
        #[command(flatten)]
        source: ModelSource,
        /// Observable values, one per state, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        f: Vec<f64>,
        /// Level of the spectral measure.
        #[arg(long)]
        n: usize,
        /// Evaluation points of the generating function.
        #[arg(long, value_delimiter = ',')]
        z: Option<Vec<f64>>,
        /// Rescaled Laplace times (supercritical primitive models only).
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate leaf dynamics and compare against the exact semigroup values.
    Dynamics {
        #[command(flatten)]
        source: ModelSource,
        #[arg(long, value_enum, default_value = "refresh")]
        kind: DynamicsKind,
        /// Tree depth.
        #[arg(long)]
        n: usize,
        #[arg(long = "t-end")]
        t_end: f64,
        /// Autocovariance lags.
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 1.0])]
        lags: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the trajectory CSV here (comparison table goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive-enumeration consistency checks at small depth.
    OracleCheck {
        #[command(flatten)]
        source: ModelSource,
        /// Depths to check.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2])]
        n: Vec<usize>,
    },
    /// Random search for critical symmetric models with unresolved coercivity.
    Search {
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Half-width of the band around the critical line.
        #[arg(long, default_value_t = 1e-3)]
        band: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("ENDOTREE_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);
    match run(cli.command, threads) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::ResourceCap { .. }) => 4,
                Some(
                    Error::InvalidModel(_)
                    | Error::ModelFile(_)
                    | Error::UnknownBuiltin(_)
                    | Error::Io(_)
                    | Error::NoPerronVector
                    | Error::NotPrimitive
                    | Error::NotSupercritical { .. }
                    | Error::Unsupported(_),
                ) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

/// Load, validate and trim a model from a file or builtin name.
fn load_model(source: &ModelSource) -> anyhow::Result<(Model, ValidationReport<f64>, String)> {
    let (raw, notes, label) = match (&source.builtin, &source.model) {
        (Some(name), None) => (model::builtin::<f64>(name)?, Vec::new(), name.clone()),
        (None, Some(path)) => {
            let (m, notes) = model::load::<f64>(path)?;
            (m, notes, path.display().to_string())
        }
        _ => anyhow::bail!(Error::ModelFile(
            "pass exactly one of a model path or --builtin NAME".into()
        )),
    };
    let validated = model::validate(&raw, &Tolerances::default())?;
    let mut report = validated.report;
    report.messages.splice(0..0, notes);
    Ok((validated.model, report, label))
}

/// As [`load_model`], but refuse models that fail validation.
fn load_valid(source: &ModelSource) -> anyhow::Result<(Model, ValidationReport<f64>, String)> {
    let (m, report, label) = load_model(source)?;
    if !report.ok {
        anyhow::bail!(Error::InvalidModel(format!(
            "model `{label}` fails validation: {}",
            report.messages.join("; ")
        )));
    }
    Ok((m, report, label))
}

fn spectral_pipeline(m: &Model) -> anyhow::Result<(Kernel, Spectral)> {
    let kernel = kernels::two_point_kernel(m);
    let spectral = SpectralData::compute(&kernel, &m.mu)?;
    Ok((kernel, spectral))
}

fn emit(out: &Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run(command: Command, threads: usize) -> anyhow::Result<ExitCode> {
    match command {
        Command::Validate { source } => {
            let (_, report, _) = load_model(&source)?;
            println!("{}", serde_json::to_string_pretty(&report.to_json())?);
            Ok(ExitCode::from(if report.ok { 0 } else { 2 }))
        }

        Command::Analyze {
            source,
            mmax,
            bivariate,
            seed,
            timings,
            kernel_csv,
        } => {
            let started = Instant::now();
            let (m, report, label) = load_valid(&source)?;
            let (kernel, spectral) = spectral_pipeline(&m)?;
            if let Some(path) = &kernel_csv {
                let labels: Vec<String> = (0..kernel.pairs.n_full())
                    .map(|full| kernel.pairs.full_label(full, &m.states))
                    .collect();
                std::fs::write(path, kernels::matrix_to_csv(&kernel.full, &labels, &labels))?;
            }
            let opts = ClassifyOptions {
                m_max: mmax,
                threads,
                ..ClassifyOptions::default()
            };
            let verdict = endogeny::classify(&m, &spectral, &opts);

            let one_point = kernels::one_point_kernel(&m);
            let row_residual = (0..one_point.rows())
                .map(|r| (one_point.row(r).iter().sum::<f64>() - 1.0).abs())
                .fold(0.0f64, f64::max);

            let mut sections = serde_json::Map::new();
            if bivariate > 0 {
                let mut rng = RngStream::new(seed, 0);
                let mut starts = vec![PairMeasure::product(&m.mu, &m.mu)];
                for _ in 1..bivariate {
                    starts.push(montecarlo::random_coupling(&m.mu, &mut rng));
                }
                let probe = endogeny::bivariate_uniqueness_probe(&m, &starts, 60, 1e-8)?;
                sections.insert(
                    "bivariate".into(),
                    json!({
                        "seed": seed,
                        "terminal_masses": probe.terminal_masses,
                        "evidence_for_uniqueness": probe.evidence_for_uniqueness,
                    }),
                );
            }

            let mut out = json!({
                "model": {
                    "source": label,
                    "states": m.states,
                    "innovations": m.innovations,
                    "mu": m.mu,
                    "nu": m.nu,
                    "symmetric": m.is_symmetric(),
                },
                "validation": report.to_json(),
                "kernel": {
                    "pair_dimension": kernel.pairs.n_full(),
                    "off_diagonal_dimension": kernel.pairs.n_off(),
                    "one_point": matrix_rows(&one_point),
                    "row_sum_residual": row_residual,
                },
                "spectral": spectral.to_json(&kernel.pairs, &m.states),
                "verdict": verdict.to_json(),
                "version": env!("CARGO_PKG_VERSION"),
                "sections": Value::Object(sections),
            });
            if timings {
                out["wall_ms"] = json!(started.elapsed().as_millis() as u64);
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::from(
                if verdict.decision == Decision::Indeterminate {
                    3
                } else {
                    0
                },
            ))
        }

        Command::Bivariate {
            source,
            starts,
            n,
            tol,
            seed,
            out,
        } => {
            let (m, _, _) = load_valid(&source)?;
            let mut rng = RngStream::new(seed, 0);
            let mut list = vec![PairMeasure::product(&m.mu, &m.mu)];
            for _ in 1..starts.max(1) {
                list.push(montecarlo::random_coupling(&m.mu, &mut rng));
            }
            let probe = endogeny::bivariate_uniqueness_probe(&m, &list, n, tol)?;
            let mut csv = format!("# seed={seed}\nstart,step,off_diagonal_mass\n");
            for (i, trace) in probe.traces.iter().enumerate() {
                for (step, mass) in trace.masses.iter().enumerate() {
                    csv.push_str(&format!("{i},{step},{mass}\n"));
                }
            }
            emit(&out, &csv)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Spectrum {
            source,
            f,
            n,
            z,
            t,
            out,
        } => {
            let (m, _, _) = load_valid(&source)?;
            if f.len() != m.n_states() {
                anyhow::bail!(Error::InvalidModel(format!(
                    "observable has {} entries but the model has {} states",
                    f.len(),
                    m.n_states()
                )));
            }
            let (_, spectral) = spectral_pipeline(&m)?;
            let superops = Superops::new(&m);
            let z_grid = z.unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]);
            let t_grid = t.unwrap_or_default();
            let report = superop::SpectralMeasureReport::compute(
                &superops, &spectral, &f, n, &z_grid, &t_grid,
            )?;
            emit(&out, &report.to_csv())?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Dynamics {
            source,
            kind,
            n,
            t_end,
            lags,
            seed,
            out,
        } => {
            let (m, _, _) = load_valid(&source)?;
            let superops = Superops::new(&m);
            let mut rng = RngStream::new(seed, 0);
            let (traj, exact): (montecarlo::Trajectory<f64>, Vec<f64>) = match kind {
                DynamicsKind::Refresh => {
                    let traj = montecarlo::refresh_dynamics(&m, n, t_end, &mut rng);
                    let f = observable_default(&m);
                    let exact = lags
                        .iter()
                        .map(|&lag| superop::spectral_pgf(&superops, &f, n, (-lag).exp()))
                        .collect();
                    (traj, exact)
                }
                DynamicsKind::Qn => {
                    let (kernel, spectral) = spectral_pipeline(&m)?;
                    let q = GeneratorQ::from_spectral(&m, &kernel.pairs, &spectral)?;
                    let traj = montecarlo::gillespie_generator_dynamics(
                        &m,
                        spectral.rho,
                        &q,
                        n,
                        t_end,
                        &mut rng,
                    )?;
                    let f = observable_default(&m);
                    let exact = lags
                        .iter()
                        .map(|&lag| {
                            superop::laplace_limit(&superops, &spectral, &f, lag, 20)
                                .map(|trace| trace.limit)
                        })
                        .collect::<Result<_, _>>()?;
                    (traj, exact)
                }
            };
            let f = observable_default(&m);
            let points = montecarlo::autocovariance(&traj, &f, &lags);
            let table: Vec<Value> = points
                .iter()
                .zip(&exact)
                .map(|(p, &ex)| {
                    json!({
                        "lag": p.lag,
                        "estimate": p.estimate,
                        "se": p.se,
                        "exact": ex,
                        "gap_in_se": if p.se > 0.0 { (p.estimate - ex).abs() / p.se } else { 0.0 },
                    })
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "seed": traj.seed,
                    "events": traj.events,
                    "observable": f,
                    "comparison": table,
                }))?
            );
            if out.is_some() {
                emit(&out, &traj.to_csv(&m.states))?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::OracleCheck { source, n } => {
            let (m, _, _) = load_valid(&source)?;
            let results = oracle_checks(&m, &n)?;
            let all_pass = results.iter().all(|r| r["pass"] == json!(true));
            println!("{}", serde_json::to_string_pretty(&Value::Array(results))?);
            Ok(ExitCode::from(if all_pass { 0 } else { 1 }))
        }

        Command::Search { budget, seed, band } => {
            let mut rng = RngStream::new(seed, 0);
            let candidates = montecarlo::search_critical_symmetric::<f64>(&mut rng, budget, band);
            let out: Vec<Value> = candidates
                .iter()
                .map(|c| {
                    json!({
                        "rho": c.rho,
                        "coercivity_trace": c.coercivity_trace
                            .iter()
                            .map(|(m, v)| json!([m, v]))
                            .collect::<Vec<_>>(),
                        "model": c.model.to_json(),
                    })
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "seed": seed,
                    "budget": budget,
                    "band": band,
                    "candidates": out,
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Default root observable: the sign observable on two states, otherwise the
/// mean-removed indicator of the first state.
fn observable_default(m: &Model) -> Vec<f64> {
    if m.n_states() == 2 {
        vec![-1.0, 1.0]
    } else {
        (0..m.n_states())
            .map(|x| if x == 0 { 1.0 - m.mu[0] } else { -m.mu[0] })
            .collect()
    }
}

fn matrix_rows(m: &endotree::linalg::Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Ground-truth checks of the analytic identities by exhaustive enumeration.
fn oracle_checks(m: &Model, levels: &[usize]) -> anyhow::Result<Vec<Value>> {
    let superops = Superops::new(m);
    let mut results = Vec::new();
    let f = observable_default(m);
    for &level in levels {
        let mut weight_total = 0.0f64;
        for config in oracle::enumerate(m, level)? {
            weight_total += config.weight;
        }
        results.push(json!({
            "check": "weights_sum_to_one",
            "level": level,
            "pass": (weight_total - 1.0).abs() <= 1e-12,
            "detail": format!("total {weight_total}"),
        }));

        let norms = oracle::exact_subset_norms(m, &f, level)?;
        let total: f64 = norms.iter().sum();
        let norm2: f64 = m.mu.iter().zip(&f).map(|(mu, fv)| mu * fv * fv).sum();
        results.push(json!({
            "check": "subset_decomposition_complete",
            "level": level,
            "pass": (total - norm2).abs() <= 1e-12,
            "detail": format!("sum {total} vs norm {norm2}"),
        }));

        let masses = oracle::exact_spectral_measure(m, &f, level)?;
        let mean: f64 = masses.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
        let form = kernels::number_operator_form(m, &f, level);
        results.push(json!({
            "check": "mean_matches_number_form",
            "level": level,
            "pass": (mean - form).abs() <= 1e-10,
            "detail": format!("mean {mean} vs form {form}"),
        }));

        let mut pgf_pass = true;
        let mut pgf_worst = 0.0f64;
        for &z in &[0.0f64, 0.25, 0.5, 0.75, 1.0] {
            let exact: f64 = masses
                .iter()
                .enumerate()
                .map(|(k, &v)| z.powi(k as i32) * v)
                .sum();
            let pgf = superop::spectral_pgf(&superops, &f, level, z);
            pgf_worst = pgf_worst.max((pgf - exact).abs());
            pgf_pass &= (pgf - exact).abs() <= 1e-10;
        }
        results.push(json!({
            "check": "pgf_matches_enumeration",
            "level": level,
            "pass": pgf_pass,
            "detail": format!("worst deviation {pgf_worst:.2e}"),
        }));

        let (residual, bound) = oracle::exact_innovation_residual(m, &f, level)?;
        results.push(json!({
            "check": "projection_inequality",
            "level": level,
            "pass": residual >= -1e-12 && residual <= bound + 1e-12,
            "detail": format!("residual {residual} vs bound {bound}"),
        }));

        let exact = oracle::exact_coupling_disagreement(m, level)?;
        let trace = kernels::bivariate_iterate(m, PairMeasure::product(&m.mu, &m.mu), level, 0.0)?;
        let iterate = trace.masses[level];
        results.push(json!({
            "check": "coupling_matches_iteration",
            "level": level,
            "pass": (exact - iterate).abs() <= 1e-12,
            "detail": format!("enumeration {exact} vs iterate {iterate}"),
        }));
    }
    Ok(results)
}
