//! Command-line interface: sampling, inclusion-probability solving,
//! risk estimation, training, bound reports, the replication experiment
//! and the exact validation suites.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use svylearn::bounds::{self, BernsteinInputs, TailCheck};
use svylearn::designs::{enumerate_design, DesignSpec, DEFAULT_MAX_REJECTIONS};
use svylearn::estimators::{
    biased_ht_risk, empirical_risk, ht_risk, monte_carlo_expected_ht_risk,
    poisson_conditional_variance, Classifier, RiskKind,
};
use svylearn::experiment::{run_experiment, summarize, ExperimentConfig};
use svylearn::inclusion::{solve_canonical_p, DEFAULT_SOLVER_MAX_ITER, DEFAULT_SOLVER_TOL};
use svylearn::io::{self, ModelFile};
use svylearn::learners::{
    cross_validate_lambda, train_weighted_svm, train_weighted_tree, SvmConfig, TreeConfig,
};
use svylearn::validate::run_validation_suite;

#[derive(Parser)]
#[command(
    name = "svylearn",
    about = "Survey-sample learning: designs, HT estimation, weighted learners, bounds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from a design JSON and write the indicator CSV.
    Sample(SampleArgs),
    /// Solve canonical Poisson parameters from an inclusion-probability CSV.
    SolvePi(SolvePiArgs),
    /// Estimate risks of a trained model on a population.
    Estimate(EstimateArgs),
    /// Train an HT-weighted learner and write the model JSON.
    Train(TrainArgs),
    /// Evaluate the bound calculators on a BoundInputs JSON.
    Bound(BoundArgs),
    /// Run the replication experiment and write rows CSV + aggregate JSON.
    Experiment(ExperimentArgs),
    /// Run the exact validation suites; exit code 0 iff every suite passes.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Design spec JSON path.
    #[arg(long)]
    design: PathBuf,
    /// Seed for the draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rejection budget for accept/reject designs.
    #[arg(long, default_value_t = DEFAULT_MAX_REJECTIONS)]
    max_rejections: usize,
    /// Output indicator CSV (columns index,epsilon).
    #[arg(long)]
    out: PathBuf,
    /// Also write the exact enumerated design to this CSV (N <= 20).
    #[arg(long)]
    enumerate: Option<PathBuf>,
}

#[derive(Args)]
struct SolvePiArgs {
    /// Input CSV with columns index,pi.
    #[arg(long)]
    pi: PathBuf,
    /// Output CSV with columns index,p.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SOLVER_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_SOLVER_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct EstimateArgs {
    /// Population CSV (columns f_0,...,f_{d-1},label).
    #[arg(long)]
    population: PathBuf,
    /// Model JSON from `train`.
    #[arg(long)]
    model: PathBuf,
    /// Sample indicator CSV; with --pi this yields the HT risk.
    #[arg(long)]
    sample: Option<PathBuf>,
    /// Inclusion probabilities CSV (index,pi) for HT weighting.
    #[arg(long)]
    pi: Option<PathBuf>,
    /// Canonical parameters CSV (index,p) for the biased HT risk and the
    /// Poisson conditional-variance field.
    #[arg(long)]
    p: Option<PathBuf>,
    /// Design JSON: with --pi and --reps, reports the Monte-Carlo design
    /// expectation of the HT risk with its standard error.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output risk-report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    /// Inclusion probabilities CSV; omit to train unweighted.
    #[arg(long)]
    pi: Option<PathBuf>,
    /// Learner kind: svm or tree.
    #[arg(long)]
    learner: String,
    /// Fixed lambda; omitted means 5-fold cross-validation on a log grid.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    eta0: f64,
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    min_leaf_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    /// BoundInputs JSON path.
    #[arg(long)]
    inputs: PathBuf,
    /// Run the enumeration oracles (N <= 12) and attach validity checks.
    #[arg(long)]
    validate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON; defaults to the desk-scale config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the full-scale configuration (20000-point population, 50
    /// replications) instead of the desk-scale default.
    #[arg(long)]
    full: bool,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for rows.csv and aggregates.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 8)]
    max_n: usize,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Sample(args) => sample(args),
        Command::SolvePi(args) => solve_pi(args),
        Command::Estimate(args) => estimate(args),
        Command::Train(args) => train(args),
        Command::Bound(args) => bound(args),
        Command::Experiment(args) => experiment(args),
        Command::Validate(args) => validate(args),
    }
}

fn sample(args: SampleArgs) -> Result<()> {
    let spec = io::read_design_json(&args.design).context("reading design JSON")?;
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let indicator = spec
        .draw_with_budget(&mut rng, args.max_rejections)
        .context("drawing sample")?;
    io::write_sample_csv(&args.out, &indicator).context("writing sample CSV")?;
    if let Some(path) = args.enumerate {
        let design = enumerate_design(&spec).context("enumerating design")?;
        io::write_enumerated_csv(&path, &design).context("writing enumerated CSV")?;
    }
    println!(
        "drew sample of size {} from population of {}",
        indicator.size(),
        indicator.n_pop()
    );
    Ok(())
}

fn solve_pi(args: SolvePiArgs) -> Result<()> {
    let pi = io::read_pi_csv(&args.pi).context("reading pi CSV")?;
    let p = solve_canonical_p(&pi, args.tol, args.max_iter).context("solving canonical p")?;
    io::write_p_csv(&args.out, &p).context("writing p CSV")?;
    println!("solved canonical parameters for {} units", p.len());
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let pop = io::read_population_csv(&args.population).context("reading population CSV")?;
    let model = io::read_model_json(&args.model).context("reading model JSON")?;
    let clf = |x: &[f64]| match &model {
        ModelFile::Svm(m) => m.classify(x),
        ModelFile::Tree(m) => m.classify(x),
    };

    #[derive(serde::Serialize)]
    struct RiskReport {
        kind: RiskKind,
        value: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        std_error: Option<f64>,
    }
    let empirical = empirical_risk(&pop, &clf);
    let mut risks = vec![RiskReport {
        kind: empirical.kind,
        value: empirical.value,
        std_error: None,
    }];
    let mut poisson_cond_variance = None;
    if let Some(sample_path) = &args.sample {
        let sample = io::read_sample_csv(sample_path).context("reading sample CSV")?;
        if let Some(pi_path) = &args.pi {
            let pi = io::read_pi_csv(pi_path)?;
            let ht = ht_risk(&pop, &clf, &sample, &pi).context("HT risk")?;
            risks.push(RiskReport {
                kind: ht.kind,
                value: ht.value,
                std_error: None,
            });
        }
        if let Some(p_path) = &args.p {
            let p = io::read_p_csv(p_path)?;
            let biased = biased_ht_risk(&pop, &clf, &sample, &p).context("biased HT risk")?;
            risks.push(RiskReport {
                kind: biased.kind,
                value: biased.value,
                std_error: None,
            });
            poisson_cond_variance = Some(poisson_conditional_variance(&pop, &clf, &p));
        }
    }
    if let (Some(design_path), Some(pi_path)) = (&args.design, &args.pi) {
        let spec = io::read_design_json(design_path)?;
        let pi = io::read_pi_csv(pi_path)?;
        let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
        let (mean, se) =
            monte_carlo_expected_ht_risk(&pop, &clf, &spec, &pi, args.reps, &mut rng)
                .context("Monte-Carlo design expectation")?;
        risks.push(RiskReport {
            kind: RiskKind::Ht,
            value: mean,
            std_error: Some(se),
        });
    }

    #[derive(serde::Serialize)]
    struct EstimateOut {
        risks: Vec<RiskReport>,
        #[serde(skip_serializing_if = "Option::is_none")]
        poisson_cond_variance: Option<f64>,
    }
    let out = EstimateOut {
        risks,
        poisson_cond_variance,
    };
    io::write_json(&args.out, &out).context("writing risk report")?;
    println!("wrote risk report to {}", args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let pop = io::read_population_csv(&args.population)?;
    let sample = io::read_sample_csv(&args.sample)?;
    let pi = match &args.pi {
        Some(path) => io::read_pi_csv(path)?,
        None => vec![1.0; pop.len()],
    };
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let model = match args.learner.as_str() {
        "svm" => {
            let base = SvmConfig {
                lambda: args.lambda.unwrap_or(1e-3),
                degree: args.degree,
                eta0: args.eta0,
                epochs: args.epochs,
                ..SvmConfig::default()
            };
            let cfg = match args.lambda {
                Some(_) => base,
                None => {
                    let grid = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
                    let (lambda, _) = cross_validate_lambda(
                        &pop, &sample, &pi, &grid, 5, &base, true, &mut rng,
                    )?;
                    SvmConfig { lambda, ..base }
                }
            };
            ModelFile::Svm(train_weighted_svm(&pop, &sample, &pi, &cfg, &mut rng)?)
        }
        "tree" => {
            let cfg = TreeConfig {
                max_depth: args.max_depth,
                min_leaf_weight: args.min_leaf_weight,
            };
            ModelFile::Tree(train_weighted_tree(&pop, &sample, &pi, &cfg)?)
        }
        other => bail!("unknown learner {other:?}; expected svm or tree"),
    };
    io::write_model_json(&args.out, &model)?;
    println!("wrote model to {}", args.out.display());
    Ok(())
}

fn bound(args: BoundArgs) -> Result<()> {
    let file = std::fs::File::open(&args.inputs).context("opening inputs JSON")?;
    let inputs: bounds::BoundInputs<f64> =
        serde_json::from_reader(std::io::BufReader::new(file)).context("parsing inputs JSON")?;
    inputs.validate().context("validating inputs")?;

    let mut empirical: Vec<TailCheck<f64>> = Vec::new();
    let mut smallest_c = None;
    let mut bernstein: Option<BernsteinInputs<f64>> = None;
    if args.validate {
        if inputs.n_pop > 12 {
            bail!("--validate requires N <= 12 (exact enumeration)");
        }
        let checks = oracle_checks(&inputs, args.seed)?;
        empirical = checks.0;
        smallest_c = Some(checks.1);
        bernstein = checks.2;
    }
    let report = bounds::bound_report(&inputs, bernstein.as_ref(), empirical, smallest_c)?;
    io::write_json(&args.out, &report)?;
    println!("wrote bound report to {}", args.out.display());
    Ok(())
}

/// Exact enumeration oracles for `bound --validate`: a seeded rejective
/// instance matching (N, n), checked against the deviation tail bound
/// and the Bernstein tail on a threshold grid.
fn oracle_checks(
    inputs: &bounds::BoundInputs<f64>,
    seed: u64,
) -> Result<(Vec<TailCheck<f64>>, f64, Option<BernsteinInputs<f64>>)> {
    use rand::Rng;
    use svylearn::designs::SampleIndicator;
    use svylearn::estimators::{sup_deviation_tail, Population};
    use svylearn::inclusion::{exact_pi_from_p, normalize_odds_to_size};
    use svylearn::learners::stump_grid;

    let n_pop = inputs.n_pop;
    let n = inputs.n.min(n_pop - 1).max(1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n_pop).map(|_| rng.gen_range(0.2..0.8)).collect();
    let odds: Vec<f64> = raw.iter().map(|&x| x / (1.0 - x)).collect();
    let p = normalize_odds_to_size(&odds, n)?;
    let design = enumerate_design(&DesignSpec::Rejective { p: p.clone(), n })?;
    let probs = exact_pi_from_p(&p, n)?;
    let kappa = probs.kappa();
    let pi = probs.pi().to_vec();

    let features: Vec<Vec<f64>> = (0..n_pop)
        .map(|i| vec![i as f64 + rng.gen_range(-0.3..0.3)])
        .collect();
    let labels: Vec<i8> = (0..n_pop)
        .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    let pop = Population::new(features, labels)?;
    let class = stump_grid(&pop, 0, 1);
    let log_capacity = (class.len() as f64).ln();

    let mut checks = Vec::new();
    let t_cap = kappa * n_pop as f64 / n as f64;
    let thresholds: Vec<f64> = (1..=20).map(|j| t_cap * j as f64 / 20.0).collect();
    let tails = sup_deviation_tail(&pop, &class, &design, &pi, &thresholds)?;
    for (&t, &exact) in thresholds.iter().zip(&tails) {
        let bound = bounds::deviation_tail_with(t, n, kappa, log_capacity);
        checks.push(TailCheck::new("sup_deviation", t, exact, bound));
    }

    // Bernstein on the centered HT sum with unit coefficients.
    let c = (0..n_pop)
        .map(|i| (1.0 / pi[i] - 1.0).max(1.0) / n_pop as f64)
        .fold(0.0f64, f64::max);
    let sigma_sq: Vec<f64> = (0..n_pop)
        .map(|i| (1.0 - pi[i]) / pi[i] / (n_pop as f64).powi(2))
        .collect();
    let stat = |s: &SampleIndicator| {
        (0..n_pop)
            .map(|i| {
                let eps = if s.contains(i) { 1.0 } else { 0.0 };
                (eps / pi[i] - 1.0) / n_pop as f64
            })
            .sum::<f64>()
    };
    let t_max = design
        .support()
        .map(|(mask, _)| stat(&SampleIndicator::from_bitmask(n_pop, mask)))
        .fold(0.0f64, f64::max);
    let sum_sigma: f64 = sigma_sq.iter().sum();
    for j in 1..=20 {
        let t = t_max * j as f64 / 20.0;
        let exact = design.tail_probability(stat, t);
        let bound = bounds::bernstein_tail(c, sum_sigma, t);
        checks.push(TailCheck::new("bernstein", t, exact, bound));
    }
    let bernstein = BernsteinInputs {
        c,
        sigma_sq,
        t: t_max / 2.0,
    };

    // Smallest C making the tail checks hold is 0 whenever all pass;
    // otherwise the worst excess translated through the C term.
    let worst = checks
        .iter()
        .map(|ch| ch.exact - ch.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let smallest = bounds::smallest_valid_c(worst.max(0.0), 0.0, inputs.vc_dim, n_pop);
    Ok((checks, smallest, Some(bernstein)))
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut config = match (&args.config, args.full) {
        (Some(path), _) => {
            let file = std::fs::File::open(path).context("opening config JSON")?;
            serde_json::from_reader(std::io::BufReader::new(file)).context("parsing config")?
        }
        (None, true) => ExperimentConfig::full_scale(),
        (None, false) => ExperimentConfig::desk_scale(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    std::fs::create_dir_all(&args.out_dir).context("creating output directory")?;
    let report = run_experiment(&config);
    io::write_experiment_csv(args.out_dir.join("rows.csv"), &report)?;
    io::write_json(args.out_dir.join("aggregates.json"), &report)?;
    for (name, stats) in &report.aggregates {
        println!(
            "{name}: mean {:.4} std {:.4} over {} replications",
            stats.mean, stats.std, stats.count
        );
    }
    if report.failed_replications > 0 {
        bail!("{} replications failed", report.failed_replications);
    }
    // Aggregates must recompute from rows exactly.
    for (name, stats) in &report.aggregates {
        let values: Vec<f64> = report.rows.iter().filter_map(|r| r.get(name)).collect();
        let again = summarize(&values);
        if (again.mean - stats.mean).abs() > 1e-12 {
            bail!("aggregate mismatch for {name}");
        }
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let report = run_validation_suite(args.max_n, args.instances, args.seed);
    for suite in &report.suites {
        println!(
            "{}: {} ({} instances, {} failures, max violation {:.3e}) {}",
            suite.name,
            if suite.pass { "PASS" } else { "FAIL" },
            suite.instances,
            suite.failures,
            suite.max_violation,
            suite.note
        );
    }
    if let Some(path) = &args.out {
        io::write_json(path, &report)?;
    }
    if !report.pass {
        std::process::exit(1);
    }
    Ok(())
}
