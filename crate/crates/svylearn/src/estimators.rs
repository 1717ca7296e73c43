//! Risk functionals over a finite labeled population: the
//! full-population empirical risk, the Horvitz-Thompson (HT) weighted
//! risk of a drawn sample, its biased (canonical-parameter weighted) and
//! mixed-weight variants, the total-variation distance between designs
//! and the exact design-expectation oracles built on enumeration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::designs::{EnumeratedDesign, SampleIndicator};
use crate::{kahan_sum, real_usize, Real};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("feature matrix has {n_rows} rows but {n_labels} labels")]
    ShapeMismatch { n_rows: usize, n_labels: usize },
    #[error("label at index {index} is {value}, expected -1 or +1")]
    InvalidLabel { index: usize, value: i8 },
    #[error("feature at row {row} is not finite")]
    NonFiniteFeature { row: usize },
    #[error("sample covers {sample} units, population has {population}")]
    SampleMismatch { sample: usize, population: usize },
    #[error("unit {index} is sampled but its weight probability is {value}")]
    WeightUndefined { index: usize, value: f64 },
    #[error("designs have different population sizes: {a} vs {b}")]
    IncompatibleDesigns { a: usize, b: usize },
    #[error("classifier class is empty")]
    EmptyClass,
    #[error(transparent)]
    Design(#[from] crate::designs::DesignError),
}

/// A labeled finite population: an `N x d` feature matrix and labels in
/// `{-1, +1}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Population<T> {
    features: Vec<T>,
    n: usize,
    dim: usize,
    labels: Vec<i8>,
}

impl<T: Real> Population<T> {
    pub fn new(features: Vec<Vec<T>>, labels: Vec<i8>) -> Result<Self, EstimatorError> {
        let n = features.len();
        let dim = features.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * dim);
        for row in &features {
            assert_eq!(row.len(), dim, "ragged feature matrix");
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, n, dim, labels)
    }

    pub fn from_flat(
        features: Vec<T>,
        n: usize,
        dim: usize,
        labels: Vec<i8>,
    ) -> Result<Self, EstimatorError> {
        if n == 0 {
            return Err(EstimatorError::EmptyPopulation);
        }
        if labels.len() != n || features.len() != n * dim {
            return Err(EstimatorError::ShapeMismatch {
                n_rows: n,
                n_labels: labels.len(),
            });
        }
        for (i, &l) in labels.iter().enumerate() {
            if l != -1 && l != 1 {
                return Err(EstimatorError::InvalidLabel { index: i, value: l });
            }
        }
        for (row, chunk) in features.chunks(dim.max(1)).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(EstimatorError::NonFiniteFeature { row });
            }
        }
        Ok(Self {
            features,
            n,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }
}

/// A binary classifier over the population's feature space.
pub trait Classifier<T> {
    /// Predicted label in `{-1, +1}` for a feature row of matching
    /// dimension.
    fn classify(&self, x: &[T]) -> i8;
}

impl<T, F: Fn(&[T]) -> i8> Classifier<T> for F {
    fn classify(&self, x: &[T]) -> i8 {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    True,
    Empirical,
    Ht,
    BiasedHt,
    Mixed,
}

/// A risk estimate. `Empirical` and `True` values lie in `[0, 1]`; the
/// HT kinds are nonnegative but can exceed 1 and are deliberately not
/// clipped (clipping would destroy unbiasedness).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RiskValue<T> {
    pub value: T,
    pub kind: RiskKind,
}

fn misclassified<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    i: usize,
) -> bool {
    clf.classify(pop.row(i)) != pop.label(i)
}

/// Full-population misclassification rate `(1/N) sum 1{g(X_i) != Y_i}`.
pub fn empirical_risk<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
) -> RiskValue<T> {
    let hits = (0..pop.len()).filter(|&i| misclassified(pop, clf, i)).count();
    RiskValue {
        value: real_usize::<T>(hits) / real_usize::<T>(pop.len()),
        kind: RiskKind::Empirical,
    }
}

fn weighted_sample_risk<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    sample: &SampleIndicator,
    weights: &[T],
    kind: RiskKind,
) -> Result<RiskValue<T>, EstimatorError> {
    if sample.n_pop() != pop.len() || weights.len() != pop.len() {
        return Err(EstimatorError::SampleMismatch {
            sample: sample.n_pop(),
            population: pop.len(),
        });
    }
    // 0/0 = 0 for excluded units: only included units touch the weights.
    let mut terms = Vec::with_capacity(sample.size());
    for i in sample.iter_included() {
        let w = weights[i];
        if !(w > T::zero()) {
            return Err(EstimatorError::WeightUndefined {
                index: i,
                value: w.to_f64().unwrap_or(f64::NAN),
            });
        }
        if misclassified(pop, clf, i) {
            terms.push(T::one() / w);
        }
    }
    Ok(RiskValue {
        value: kahan_sum(terms) / real_usize::<T>(pop.len()),
        kind,
    })
}

/// Horvitz-Thompson risk `(1/N) sum (eps_i / pi_i) 1{g(X_i) != Y_i}`.
pub fn ht_risk<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    sample: &SampleIndicator,
    pi: &[T],
) -> Result<RiskValue<T>, EstimatorError> {
    weighted_sample_risk(pop, clf, sample, pi, RiskKind::Ht)
}

/// The biased variant that weights by the canonical Poisson parameters
/// `p` instead of the true inclusion probabilities.
pub fn biased_ht_risk<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    sample: &SampleIndicator,
    p: &[T],
) -> Result<RiskValue<T>, EstimatorError> {
    weighted_sample_risk(pop, clf, sample, p, RiskKind::BiasedHt)
}

/// Mixed-weight risk: a rejective indicator weighted by another design's
/// inclusion probabilities `pi_star` — the pivot of the coupling
/// decomposition for general sampling schemes.
pub fn mixed_risk<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    sample: &SampleIndicator,
    pi_star: &[T],
) -> Result<RiskValue<T>, EstimatorError> {
    weighted_sample_risk(pop, clf, sample, pi_star, RiskKind::Mixed)
}

/// Conditional variance of the unnormalized Poisson HT sum,
/// `sum ((1 - p_i)/p_i) 1{g(X_i) != Y_i}`; reported alongside Poisson
/// risk estimates.
pub fn poisson_conditional_variance<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    p: &[T],
) -> T {
    kahan_sum((0..pop.len()).filter_map(|i| {
        misclassified(pop, clf, i).then(|| (T::one() - p[i]) / p[i])
    }))
}

/// Total-variation distance `(1/2) sum_s |a(s) - b(s)|` between two
/// enumerated designs on the same population.
pub fn tv_distance<T: Real>(
    a: &EnumeratedDesign<T>,
    b: &EnumeratedDesign<T>,
) -> Result<T, EstimatorError> {
    if a.n_pop() != b.n_pop() {
        return Err(EstimatorError::IncompatibleDesigns {
            a: a.n_pop(),
            b: b.n_pop(),
        });
    }
    let total = kahan_sum((0..1u32 << a.n_pop()).map(|mask| (a.mass(mask) - b.mass(mask)).abs()));
    Ok(total / real_usize::<T>(2))
}

/// Largest HT-vs-empirical deviation over a finite classifier class for
/// one drawn sample: `max_g |ht_risk(g) - empirical_risk(g)|`.
pub fn sup_deviation<T: Real, C: Classifier<T>>(
    pop: &Population<T>,
    class: &[C],
    sample: &SampleIndicator,
    pi: &[T],
) -> Result<T, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    let mut sup = T::zero();
    for clf in class {
        let ht = ht_risk(pop, clf, sample, pi)?.value;
        let emp = empirical_risk(pop, clf).value;
        sup = sup.max((ht - emp).abs());
    }
    Ok(sup)
}

/// Exact design expectation of the HT risk: `sum_s mass(s) ht_risk(s)`.
/// On a design whose declared `pi` matches its marginals this equals the
/// empirical risk — the unbiasedness oracle.
pub fn design_expected_ht_risk<T: Real, C: Classifier<T> + ?Sized>(
    pop: &Population<T>,
    clf: &C,
    design: &EnumeratedDesign<T>,
    pi: &[T],
) -> Result<T, EstimatorError> {
    let mut err = None;
    let value = design.expectation(|s| match ht_risk(pop, clf, s, pi) {
        Ok(r) => r.value,
        Err(e) => {
            err = Some(e);
            T::zero()
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Monte-Carlo design expectation of the HT risk with its standard
/// error, for designs too large to enumerate. Exact enumeration
/// ([`design_expected_ht_risk`]) is the oracle of choice up to 20 units;
/// this is the honest fallback beyond it.
pub fn monte_carlo_expected_ht_risk<T: Real, C: Classifier<T> + ?Sized, R: rand::Rng>(
    pop: &Population<T>,
    clf: &C,
    spec: &crate::designs::DesignSpec<T>,
    pi: &[T],
    replications: usize,
    rng: &mut R,
) -> Result<(T, T), EstimatorError> {
    assert!(replications >= 2, "need at least two replications");
    let mut values = Vec::with_capacity(replications);
    for _ in 0..replications {
        let sample = spec.draw(rng)?;
        values.push(ht_risk(pop, clf, &sample, pi)?.value);
    }
    let count = real_usize::<T>(values.len());
    let mean = kahan_sum(values.iter().copied()) / count;
    let ss = kahan_sum(values.iter().map(|&v| (v - mean) * (v - mean)));
    let std_error = (ss / (count - T::one())).sqrt() / count.sqrt();
    Ok((mean, std_error))
}

/// Exact tail `P{sup_g |ht - empirical| >= t}` of the sup-deviation over
/// an enumerated design, evaluated at each threshold.
pub fn sup_deviation_tail<T: Real, C: Classifier<T>>(
    pop: &Population<T>,
    class: &[C],
    design: &EnumeratedDesign<T>,
    pi: &[T],
    thresholds: &[T],
) -> Result<Vec<T>, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    let mut sups = Vec::new();
    for (mask, m) in design.support() {
        let s = SampleIndicator::from_bitmask(design.n_pop(), mask);
        sups.push((sup_deviation(pop, class, &s, pi)?, m));
    }
    Ok(thresholds
        .iter()
        .map(|&t| kahan_sum(sups.iter().filter(|(v, _)| *v >= t).map(|&(_, m)| m)))
        .collect())
}
