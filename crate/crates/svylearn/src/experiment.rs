//! Experiment harness: synthetic two-Gaussian populations, rejective
//! training designs with per-class inclusion probabilities, and the
//! replication study comparing HT-weighted learners against unweighted
//! baselines trained on the same samples.
//!
//! Everything here is seeded and deterministic: replication `r` uses the
//! stream `r + 1` of a ChaCha12 generator seeded with the master seed,
//! so reports are reproducible regardless of how replications are
//! scheduled across threads.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::designs::{srswor_draw, DesignError, DesignSpec, DEFAULT_MAX_REJECTIONS};
use crate::estimators::{empirical_risk, Classifier, EstimatorError, Population};
use crate::inclusion::{self, InclusionError};
use crate::learners::{
    cross_validate_lambda, train_weighted_svm, train_weighted_tree, LearnError, SvmConfig,
    TreeConfig,
};
use crate::kahan_sum;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("covariance scale must be positive, got {0}")]
    InvalidCovariance(f64),
    #[error("class sizes must be positive")]
    EmptyClass,
    #[error("per-class inclusion probabilities must lie in (0,1)")]
    InvalidInclusion,
    #[error("expected sample size {0} is not an integer within 1e-9")]
    NonIntegralSize(f64),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Inclusion(#[from] InclusionError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Two-class Gaussian mixture: isotropic covariance per class
/// (`var * I_dim`), constant mean vector per class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub dim: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub var_pos: f64,
    pub var_neg: f64,
}

impl GaussianMixtureSpec {
    /// The synthetic setup of the replication study: positive class
    /// centered at the origin with unit covariance, negative class at
    /// `(1, ..., 1)` with covariance `10 I`, balanced classes.
    pub fn benchmark(dim: usize, n_per_class: usize, test_per_class: usize) -> Self {
        Self {
            dim,
            n_pos: n_per_class,
            n_neg: n_per_class,
            test_pos: test_per_class,
            test_neg: test_per_class,
            mean_pos: 0.0,
            mean_neg: 1.0,
            var_pos: 1.0,
            var_neg: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.var_pos <= 0.0 || self.var_neg <= 0.0 {
            return Err(ExperimentError::InvalidCovariance(
                self.var_pos.min(self.var_neg),
            ));
        }
        if self.n_pos == 0 || self.n_neg == 0 || self.test_pos == 0 || self.test_neg == 0 {
            return Err(ExperimentError::EmptyClass);
        }
        Ok(())
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per pair of uniforms keeps the stream simple.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_block<R: Rng>(
    rng: &mut R,
    count: usize,
    dim: usize,
    mean: f64,
    var: f64,
    label: i8,
    feats: &mut Vec<f64>,
    labels: &mut Vec<i8>,
) {
    let sd = var.sqrt();
    for _ in 0..count {
        for _ in 0..dim {
            feats.push(mean + sd * standard_normal(rng));
        }
        labels.push(label);
    }
}

/// Draws a train and a test population from the mixture. Identical seeds
/// give bit-identical populations.
pub fn gen_gaussian_population<R: Rng>(
    spec: &GaussianMixtureSpec,
    rng: &mut R,
) -> Result<(Population<f64>, Population<f64>), ExperimentError> {
    spec.validate()?;
    let mut feats = Vec::with_capacity((spec.n_pos + spec.n_neg) * spec.dim);
    let mut labels = Vec::with_capacity(spec.n_pos + spec.n_neg);
    gaussian_block(rng, spec.n_pos, spec.dim, spec.mean_pos, spec.var_pos, 1, &mut feats, &mut labels);
    gaussian_block(rng, spec.n_neg, spec.dim, spec.mean_neg, spec.var_neg, -1, &mut feats, &mut labels);
    let train = Population::from_flat(feats, spec.n_pos + spec.n_neg, spec.dim, labels)?;

    let mut feats = Vec::with_capacity((spec.test_pos + spec.test_neg) * spec.dim);
    let mut labels = Vec::with_capacity(spec.test_pos + spec.test_neg);
    gaussian_block(rng, spec.test_pos, spec.dim, spec.mean_pos, spec.var_pos, 1, &mut feats, &mut labels);
    gaussian_block(rng, spec.test_neg, spec.dim, spec.mean_neg, spec.var_neg, -1, &mut feats, &mut labels);
    let test = Population::from_flat(feats, spec.test_pos + spec.test_neg, spec.dim, labels)?;
    Ok((train, test))
}

/// A rejective training design built from per-class first-order
/// inclusion probabilities.
#[derive(Clone, Debug)]
pub struct TrainingDesign {
    pub spec: DesignSpec<f64>,
    /// Target inclusion probability per unit (`pi_pos` or `pi_neg` by label).
    pub pi: Vec<f64>,
    /// Canonical Poisson parameters realizing those probabilities.
    pub p: Vec<f64>,
    pub n: usize,
}

/// Solves the canonical parameters for a rejective design whose
/// first-order inclusion probabilities are `pi_pos` on the positive
/// class and `pi_neg` on the negative class. The expected size
/// `sum(pi)` must be an integer.
///
/// The solve runs once on the two-block vector sorted by class; the
/// canonical map is permutation-equivariant, so the per-class values are
/// scattered back by label.
pub fn build_rejective_training_design(
    pop: &Population<f64>,
    pi_pos: f64,
    pi_neg: f64,
) -> Result<TrainingDesign, ExperimentError> {
    if !(0.0..1.0).contains(&pi_pos)
        || !(0.0..1.0).contains(&pi_neg)
        || pi_pos <= 0.0
        || pi_neg <= 0.0
    {
        return Err(ExperimentError::InvalidInclusion);
    }
    let n_pos = pop.labels().iter().filter(|&&l| l == 1).count();
    let n_neg = pop.len() - n_pos;
    let expected = pi_pos * n_pos as f64 + pi_neg * n_neg as f64;
    let n = expected.round();
    if (expected - n).abs() > 1e-9 * n.max(1.0) {
        return Err(ExperimentError::NonIntegralSize(expected));
    }
    let n = n as usize;

    let mut blocked = vec![pi_pos; n_pos];
    blocked.resize(n_pos + n_neg, pi_neg);
    let solved = inclusion::solve_canonical_p(&blocked, 1e-10, 10_000)?;
    let p_pos = solved[0];
    let p_neg = solved[n_pos.min(solved.len() - 1)];

    let mut pi = Vec::with_capacity(pop.len());
    let mut p = Vec::with_capacity(pop.len());
    for &label in pop.labels() {
        if label == 1 {
            pi.push(pi_pos);
            p.push(p_pos);
        } else {
            pi.push(pi_neg);
            p.push(p_neg);
        }
    }
    Ok(TrainingDesign {
        spec: DesignSpec::Rejective { p: p.clone(), n },
        pi,
        p,
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    Svm,
    Tree,
    Both,
}

/// SVM settings for the harness; `lambda_grid` is cross-validated per
/// replication and variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmSettings {
    pub degree: usize,
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub eta0: f64,
    pub t0: f64,
    pub epochs: usize,
    pub restarts: usize,
    pub weighted_validation: bool,
}

impl Default for SvmSettings {
    fn default() -> Self {
        Self {
            degree: 2,
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            cv_folds: 5,
            // The balanced comparison sample converges noticeably slower
            // than the weighted one; this budget lets both reach the
            // plateau.
            eta0: 0.1,
            t0: 100.0,
            epochs: 1500,
            restarts: 5,
            weighted_validation: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub population: GaussianMixtureSpec,
    pub pi_pos: f64,
    pub pi_neg: f64,
    pub learner: LearnerChoice,
    pub svm: SvmSettings,
    pub tree: TreeConfig<f64>,
    pub replications: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Full-scale configuration: 20000-point population, 1100-point
    /// samples, 50 replications.
    pub fn full_scale() -> Self {
        Self {
            population: GaussianMixtureSpec::benchmark(10, 10_000, 1_000),
            pi_pos: 0.01,
            pi_neg: 0.1,
            learner: LearnerChoice::Both,
            svm: SvmSettings::default(),
            tree: TreeConfig::default(),
            replications: 50,
            master_seed: 1,
        }
    }

    /// Desk-scale configuration shrunk 4x for quick runs: population
    /// 5000, sample about 275, 20 replications.
    pub fn desk_scale() -> Self {
        Self {
            population: GaussianMixtureSpec::benchmark(10, 2_500, 500),
            ..Self::full_scale()
        }
        .with_replications(20)
    }

    fn with_replications(mut self, r: usize) -> Self {
        self.replications = r;
        self
    }
}

/// Per-replication test errors; `None` where the learner was not run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub svm_weighted: Option<f64>,
    pub svm_unweighted: Option<f64>,
    pub svm_srswor: Option<f64>,
    pub tree_weighted: Option<f64>,
    pub tree_unweighted: Option<f64>,
    pub tree_srswor: Option<f64>,
    pub error: Option<String>,
}

impl ReplicationRow {
    pub fn columns() -> [&'static str; 6] {
        [
            "svm_weighted",
            "svm_unweighted",
            "svm_srswor",
            "tree_weighted",
            "tree_unweighted",
            "tree_srswor",
        ]
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "svm_weighted" => self.svm_weighted,
            "svm_unweighted" => self.svm_unweighted,
            "svm_srswor" => self.svm_srswor,
            "tree_weighted" => self.tree_weighted,
            "tree_unweighted" => self.tree_unweighted,
            "tree_srswor" => self.tree_srswor,
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VariantStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReplicationRow>,
    pub aggregates: BTreeMap<String, VariantStats>,
    pub failed_replications: usize,
    pub runtime_secs: f64,
}

/// The documented seed-splitting rule: replication `rep` draws from
/// stream `rep + 1` of the master-seeded generator.
pub fn replication_rng(master_seed: u64, rep: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(rep as u64 + 1);
    rng
}

fn test_error<C: Classifier<f64>>(test: &Population<f64>, model: &C) -> f64 {
    empirical_risk(test, model).value
}

fn run_svm_variant<R: Rng>(
    pop: &Population<f64>,
    test: &Population<f64>,
    sample: &crate::designs::SampleIndicator,
    pi: &[f64],
    settings: &SvmSettings,
    weighted_validation: bool,
    rng: &mut R,
) -> Result<f64, ExperimentError> {
    let base = SvmConfig {
        lambda: settings.lambda_grid[0],
        degree: settings.degree,
        eta0: settings.eta0,
        t0: settings.t0,
        epochs: settings.epochs,
        restarts: settings.restarts,
    };
    let (lambda, _) = cross_validate_lambda(
        pop,
        sample,
        pi,
        &settings.lambda_grid,
        settings.cv_folds,
        &base,
        weighted_validation,
        rng,
    )?;
    let cfg = SvmConfig { lambda, ..base };
    let model = train_weighted_svm(pop, sample, pi, &cfg, rng)?;
    Ok(test_error(test, &model))
}

fn run_replication(config: &ExperimentConfig, rep: usize) -> Result<ReplicationRow, ExperimentError> {
    let mut rng = replication_rng(config.master_seed, rep);
    let (train, test) = gen_gaussian_population(&config.population, &mut rng)?;
    let design = build_rejective_training_design(&train, config.pi_pos, config.pi_neg)?;
    let sample = design.spec.draw_with_budget(&mut rng, DEFAULT_MAX_REJECTIONS)?;
    let srswor = srswor_draw(train.len(), design.n, &mut rng)?;
    let ones = vec![1.0; train.len()];

    let mut row = ReplicationRow {
        rep,
        ..Default::default()
    };
    let run_svm = matches!(config.learner, LearnerChoice::Svm | LearnerChoice::Both);
    let run_tree = matches!(config.learner, LearnerChoice::Tree | LearnerChoice::Both);

    if run_svm {
        row.svm_weighted = Some(run_svm_variant(
            &train,
            &test,
            &sample,
            &design.pi,
            &config.svm,
            config.svm.weighted_validation,
            &mut rng,
        )?);
        row.svm_unweighted = Some(run_svm_variant(
            &train, &test, &sample, &ones, &config.svm, false, &mut rng,
        )?);
        row.svm_srswor = Some(run_svm_variant(
            &train, &test, &srswor, &ones, &config.svm, false, &mut rng,
        )?);
    }
    if run_tree {
        let weighted = train_weighted_tree(&train, &sample, &design.pi, &config.tree)?;
        row.tree_weighted = Some(test_error(&test, &weighted));
        let unweighted = train_weighted_tree(&train, &sample, &ones, &config.tree)?;
        row.tree_unweighted = Some(test_error(&test, &unweighted));
        let srswor_tree = train_weighted_tree(&train, &srswor, &ones, &config.tree)?;
        row.tree_srswor = Some(test_error(&test, &srswor_tree));
    }
    Ok(row)
}

/// Runs the replication study. Replications execute in parallel with
/// per-replication derived seeds; aggregation is a deterministic
/// reduction over the index order.
pub fn run_experiment(config: &ExperimentConfig) -> ExperimentReport {
    let started = Instant::now();
    let mut rows: Vec<ReplicationRow> = (0..config.replications)
        .into_par_iter()
        .map(|rep| match run_replication(config, rep) {
            Ok(row) => row,
            Err(e) => ReplicationRow {
                rep,
                error: Some(e.to_string()),
                ..Default::default()
            },
        })
        .collect();
    rows.sort_by_key(|r| r.rep);

    let mut aggregates = BTreeMap::new();
    for column in ReplicationRow::columns() {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.get(column)).collect();
        if values.is_empty() {
            continue;
        }
        aggregates.insert(column.to_string(), summarize(&values));
    }
    let failed_replications = rows.iter().filter(|r| r.error.is_some()).count();
    ExperimentReport {
        config: config.clone(),
        rows,
        aggregates,
        failed_replications,
        runtime_secs: started.elapsed().as_secs_f64(),
    }
}

/// Mean and sample standard deviation (ddof = 1; zero for a single
/// value).
pub fn summarize(values: &[f64]) -> VariantStats {
    let count = values.len();
    let mean = kahan_sum(values.iter().copied()) / count as f64;
    let std = if count > 1 {
        let ss = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (count as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    VariantStats { mean, std, count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::enumerate_design;
    use crate::inclusion::exact_pi_from_p;

    #[test]
    fn population_is_deterministic_per_seed() {
        let spec = GaussianMixtureSpec::benchmark(3, 50, 10);
        let (a_train, a_test) = gen_gaussian_population(&spec, &mut replication_rng(9, 0)).unwrap();
        let (b_train, b_test) = gen_gaussian_population(&spec, &mut replication_rng(9, 0)).unwrap();
        assert_eq!(a_train.row(17), b_train.row(17));
        assert_eq!(a_test.row(3), b_test.row(3));
        let (c_train, _) = gen_gaussian_population(&spec, &mut replication_rng(9, 1)).unwrap();
        assert_ne!(a_train.row(17), c_train.row(17));
    }

    #[test]
    fn class_means_pass_clt_band() {
        let spec = GaussianMixtureSpec::benchmark(10, 10_000, 1_000);
        let (train, _) = gen_gaussian_population(&spec, &mut replication_rng(4, 0)).unwrap();
        let half = 10_000usize;
        for dim in 0..10 {
            let mean_pos: f64 =
                (0..half).map(|i| train.row(i)[dim]).sum::<f64>() / half as f64;
            let mean_neg: f64 = (half..2 * half)
                .map(|i| train.row(i)[dim])
                .sum::<f64>()
                / half as f64;
            let band_pos = 3.0 / (half as f64).sqrt();
            let band_neg = 3.0 * 10f64.sqrt() / (half as f64).sqrt();
            assert!((mean_pos - 0.0).abs() < band_pos, "dim {dim}: {mean_pos}");
            assert!((mean_neg - 1.0).abs() < band_neg, "dim {dim}: {mean_neg}");
        }
    }

    #[test]
    fn invalid_covariance_is_rejected() {
        let mut spec = GaussianMixtureSpec::benchmark(2, 10, 5);
        spec.var_neg = 0.0;
        assert!(matches!(
            gen_gaussian_population(&spec, &mut replication_rng(0, 0)),
            Err(ExperimentError::InvalidCovariance(_))
        ));
    }

    #[test]
    fn training_design_reproduces_benchmark_size() {
        let spec = GaussianMixtureSpec::benchmark(2, 10_000, 10);
        let (train, _) = gen_gaussian_population(&spec, &mut replication_rng(1, 0)).unwrap();
        let design = build_rejective_training_design(&train, 0.01, 0.1).unwrap();
        assert_eq!(design.n, 1_100);
        let total: f64 = design.p.iter().sum();
        assert!((total - 1_100.0).abs() < 1e-6);
    }

    #[test]
    fn training_design_round_trips_target_pi() {
        let spec = GaussianMixtureSpec::benchmark(2, 200, 10);
        let (train, _) = gen_gaussian_population(&spec, &mut replication_rng(2, 0)).unwrap();
        let design = build_rejective_training_design(&train, 0.05, 0.25).unwrap();
        let exact = exact_pi_from_p(&design.p, design.n).unwrap();
        for (a, b) in exact.pi().iter().zip(&design.pi) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn equal_class_probabilities_reduce_to_srswor_in_distribution() {
        let pop = Population::new(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![1, 1, -1, -1],
        )
        .unwrap();
        let design = build_rejective_training_design(&pop, 0.5, 0.5).unwrap();
        let enumerated = enumerate_design(&design.spec).unwrap();
        let uniform = enumerate_design(&DesignSpec::<f64>::Srswor { n_pop: 4, n: 2 }).unwrap();
        for mask in 0..16u32 {
            assert!((enumerated.mass(mask) - uniform.mass(mask)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_integral_expected_size_is_rejected() {
        let pop = Population::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1, 1, -1],
        )
        .unwrap();
        assert!(matches!(
            build_rejective_training_design(&pop, 0.3, 0.3),
            Err(ExperimentError::NonIntegralSize(_))
        ));
    }

    #[test]
    fn indistinguishable_classes_score_one_half() {
        // Same mean and covariance for both classes: any learner sits at
        // chance level on the test set.
        let mut spec = GaussianMixtureSpec::benchmark(1, 400, 400);
        spec.mean_neg = 0.0;
        spec.var_neg = 1.0;
        let config = ExperimentConfig {
            population: spec,
            pi_pos: 0.1,
            pi_neg: 0.1,
            learner: LearnerChoice::Tree,
            svm: SvmSettings::default(),
            tree: TreeConfig::default(),
            replications: 4,
            master_seed: 11,
        };
        let report = run_experiment(&config);
        assert_eq!(report.failed_replications, 0);
        let stats = &report.aggregates["tree_weighted"];
        assert!(
            (stats.mean - 0.5).abs() < 0.05,
            "mean test error {} should be near chance",
            stats.mean
        );
    }

    #[test]
    fn experiment_report_is_deterministic_and_consistent() {
        let config = ExperimentConfig {
            population: GaussianMixtureSpec::benchmark(2, 150, 50),
            pi_pos: 0.1,
            pi_neg: 0.3,
            learner: LearnerChoice::Tree,
            svm: SvmSettings::default(),
            tree: TreeConfig::default(),
            replications: 5,
            master_seed: 123,
        };
        let a = run_experiment(&config);
        let b = run_experiment(&config);
        assert_eq!(a.rows.len(), 5);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.tree_weighted, y.tree_weighted);
            assert_eq!(x.tree_unweighted, y.tree_unweighted);
        }
        // Aggregates recompute exactly from rows.
        let values: Vec<f64> = a.rows.iter().filter_map(|r| r.tree_weighted).collect();
        let again = summarize(&values);
        let stored = &a.aggregates["tree_weighted"];
        assert_eq!(again.mean, stored.mean);
        assert_eq!(again.std, stored.std);
    }
}
