//! HT-weighted classifier training: a linear SVM over polynomially
//! expanded features, fitted by full-batch subgradient descent on the
//! weighted hinge objective, and a CART-style decision tree grown on
//! HT-weighted Gini impurity.
//!
//! Both trainers weight each sampled unit `i` by `1 / pi_i`. Running
//! them with all weights equal to one on the full population recovers
//! the ordinary unweighted learners — the "unweighted" baselines in the
//! experiment harness are exactly that, not a separate code path.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::designs::SampleIndicator;
use crate::estimators::{Classifier, Population};
use crate::{kahan_sum, real, real_usize, Real};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("unsupported expansion degree {0}; expected 1 or 2")]
    UnsupportedDegree(usize),
    #[error("sample is empty")]
    EmptySample,
    #[error("unit {index} is sampled but its inclusion probability is {value}")]
    WeightUndefined { index: usize, value: f64 },
    #[error("training diverged: objective became {objective}")]
    TrainingFailure { objective: f64 },
    #[error("input has dimension {got}, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("sample covers {sample} units, population has {population}")]
    SampleMismatch { sample: usize, population: usize },
    #[error("hyperparameter out of range: {0}")]
    InvalidHyperparameter(String),
}

/// Polynomial feature map. Degree 1 is the identity; degree 2 appends
/// all squares and then all pairwise products `x_i x_j` (`i < j`, in
/// lexicographic order) after the raw features.
pub fn feature_expand<T: Real>(x: &[T], degree: usize) -> Result<Vec<T>, LearnError> {
    match degree {
        1 => Ok(x.to_vec()),
        2 => {
            let d = x.len();
            let mut out = Vec::with_capacity(expanded_dim(d, 2));
            out.extend_from_slice(x);
            for i in 0..d {
                out.push(x[i] * x[i]);
            }
            for i in 0..d {
                for j in i + 1..d {
                    out.push(x[i] * x[j]);
                }
            }
            Ok(out)
        }
        other => Err(LearnError::UnsupportedDegree(other)),
    }
}

/// Dimension of the expanded feature space.
pub fn expanded_dim(d: usize, degree: usize) -> usize {
    match degree {
        1 => d,
        2 => 2 * d + d * (d - 1) / 2,
        _ => 0,
    }
}

/// Linear classifier over expanded features:
/// `g(x) = sign(phi(x)' theta - b)` with `sign(0) = +1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub theta: Vec<T>,
    pub b: T,
    pub degree: usize,
    pub lambda: T,
    pub dim: usize,
}

impl<T: Real> LinearModel<T> {
    pub fn decision_value(&self, x: &[T]) -> Result<T, LearnError> {
        if x.len() != self.dim {
            return Err(LearnError::DimensionMismatch {
                got: x.len(),
                want: self.dim,
            });
        }
        let phi = feature_expand(x, self.degree)?;
        Ok(dot(&self.theta, &phi) - self.b)
    }

    /// Deterministic label; `sign(0) = +1`.
    pub fn predict(&self, x: &[T]) -> Result<i8, LearnError> {
        Ok(if self.decision_value(x)? >= T::zero() { 1 } else { -1 })
    }
}

impl<T: Real> Classifier<T> for LinearModel<T> {
    fn classify(&self, x: &[T]) -> i8 {
        self.predict(x).expect("feature dimension matches model")
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Step-size schedule and iteration budget of the subgradient trainer:
/// `eta_t = eta0 / (1 + t / t0)`, averaged iterate returned, best of
/// `restarts` initializations kept.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmConfig<T> {
    pub lambda: T,
    pub degree: usize,
    pub eta0: T,
    pub t0: T,
    pub epochs: usize,
    pub restarts: usize,
}

impl<T: Real> Default for SvmConfig<T> {
    fn default() -> Self {
        Self {
            lambda: real(1e-3),
            degree: 2,
            eta0: T::one(),
            t0: real(100.0),
            epochs: 500,
            restarts: 5,
        }
    }
}

struct SvmProblem<T> {
    phi: Vec<T>, // sampled units' expanded features, row-major
    y: Vec<T>,
    w: Vec<T>, // HT mass 1/pi, divided by N
    dim: usize,
}

impl<T: Real> SvmProblem<T> {
    fn build(
        pop: &Population<T>,
        units: &[usize],
        pi: &[T],
        degree: usize,
        n_pop: usize,
    ) -> Result<Self, LearnError> {
        if units.is_empty() {
            return Err(LearnError::EmptySample);
        }
        let dim = expanded_dim(pop.dim(), degree);
        if dim == 0 {
            return Err(LearnError::UnsupportedDegree(degree));
        }
        let inv_n = T::one() / real_usize::<T>(n_pop);
        let mut phi = Vec::with_capacity(units.len() * dim);
        let mut y = Vec::with_capacity(units.len());
        let mut w = Vec::with_capacity(units.len());
        for &i in units {
            let p = pi[i];
            if !(p > T::zero()) {
                return Err(LearnError::WeightUndefined {
                    index: i,
                    value: p.to_f64().unwrap_or(f64::NAN),
                });
            }
            phi.extend(feature_expand(pop.row(i), degree)?);
            y.push(real::<T>(pop.label(i) as f64));
            w.push(inv_n / p);
        }
        Ok(Self { phi, y, w, dim })
    }

    fn row(&self, k: usize) -> &[T] {
        &self.phi[k * self.dim..(k + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    /// `(1/N) sum_k (1/pi_k) max(0, 1 - y_k (phi_k' theta - b)) + lambda |theta|^2`
    fn objective(&self, theta: &[T], b: T, lambda: T) -> T {
        let hinge = kahan_sum((0..self.len()).map(|k| {
            let margin = self.y[k] * (dot(theta, self.row(k)) - b);
            self.w[k] * (T::one() - margin).max(T::zero())
        }));
        hinge + lambda * dot(theta, theta)
    }

    fn subgradient(&self, theta: &[T], b: T, lambda: T, g_theta: &mut [T], g_b: &mut T) {
        for g in g_theta.iter_mut() {
            *g = T::zero();
        }
        *g_b = T::zero();
        for k in 0..self.len() {
            let row = self.row(k);
            let margin = self.y[k] * (dot(theta, row) - b);
            if margin < T::one() {
                let scale = self.w[k] * self.y[k];
                for (g, &x) in g_theta.iter_mut().zip(row) {
                    *g = *g - scale * x;
                }
                *g_b = *g_b + scale;
            }
        }
        let two = real::<T>(2.0);
        for (g, &t) in g_theta.iter_mut().zip(theta) {
            *g = *g + two * lambda * t;
        }
    }
}

fn run_subgradient<T: Real>(
    problem: &SvmProblem<T>,
    cfg: &SvmConfig<T>,
    theta0: Vec<T>,
) -> Result<(Vec<T>, T), LearnError> {
    let dim = problem.dim;
    let mut theta = theta0;
    let mut b = T::zero();
    let mut theta_avg = vec![T::zero(); dim];
    let mut b_avg = T::zero();
    let mut g_theta = vec![T::zero(); dim];
    let mut g_b = T::zero();

    for t in 0..cfg.epochs {
        problem.subgradient(&theta, b, cfg.lambda, &mut g_theta, &mut g_b);
        let eta = cfg.eta0 / (T::one() + real_usize::<T>(t) / cfg.t0);
        for (th, &g) in theta.iter_mut().zip(&g_theta) {
            *th = *th - eta * g;
        }
        b = b - eta * g_b;
        for (avg, &th) in theta_avg.iter_mut().zip(&theta) {
            *avg = *avg + th;
        }
        b_avg = b_avg + b;
        if !b.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::TrainingFailure { objective: f64::NAN });
        }
    }
    let scale = T::one() / real_usize::<T>(cfg.epochs);
    for avg in theta_avg.iter_mut() {
        *avg = *avg * scale;
    }
    Ok((theta_avg, b_avg * scale))
}

/// Trains the HT-weighted soft-margin linear SVM
/// `min (1/N) sum_{i in S} (1/pi_i) max(0, 1 - Y_i (phi(X_i)' theta - b))
/// + lambda |theta|^2` by averaged full-batch subgradient descent; the
/// best averaged iterate over `cfg.restarts` initializations is returned
/// (restart 0 starts from zero, the rest from small random points).
pub fn train_weighted_svm<T: Real, R: Rng>(
    pop: &Population<T>,
    sample: &SampleIndicator,
    pi: &[T],
    cfg: &SvmConfig<T>,
    rng: &mut R,
) -> Result<LinearModel<T>, LearnError> {
    if sample.n_pop() != pop.len() {
        return Err(LearnError::SampleMismatch {
            sample: sample.n_pop(),
            population: pop.len(),
        });
    }
    let units: Vec<usize> = sample.iter_included().collect();
    let problem = SvmProblem::build(pop, &units, pi, cfg.degree, pop.len())?;

    let mut best: Option<(Vec<T>, T, T)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let theta0: Vec<T> = if restart == 0 {
            vec![T::zero(); problem.dim]
        } else {
            (0..problem.dim)
                .map(|_| real::<T>(rng.gen_range(-0.1..0.1)))
                .collect()
        };
        let (theta, b) = run_subgradient(&problem, cfg, theta0)?;
        let obj = problem.objective(&theta, b, cfg.lambda);
        if !obj.is_finite() {
            return Err(LearnError::TrainingFailure {
                objective: obj.to_f64().unwrap_or(f64::NAN),
            });
        }
        if best.as_ref().map_or(true, |(_, _, o)| obj < *o) {
            best = Some((theta, b, obj));
        }
    }
    let (theta, b, _) = best.expect("at least one restart");
    Ok(LinearModel {
        theta,
        b,
        degree: cfg.degree,
        lambda: cfg.lambda,
        dim: pop.dim(),
    })
}

/// Objective value of a fitted model on its training sample; exposed so
/// callers can check the self-consistency contract across restarts.
pub fn svm_objective<T: Real>(
    pop: &Population<T>,
    sample: &SampleIndicator,
    pi: &[T],
    model: &LinearModel<T>,
) -> Result<T, LearnError> {
    let units: Vec<usize> = sample.iter_included().collect();
    let problem = SvmProblem::build(pop, &units, pi, model.degree, pop.len())?;
    Ok(problem.objective(&model.theta, model.b, model.lambda))
}

/// Picks `lambda` from a grid by k-fold cross-validation on the sampled
/// units. Folds carry the HT weights along; validation risk is the
/// weighted misclassification rate when `weighted_validation` is set,
/// the plain rate otherwise.
pub fn cross_validate_lambda<T: Real, R: Rng>(
    pop: &Population<T>,
    sample: &SampleIndicator,
    pi: &[T],
    grid: &[T],
    folds: usize,
    base: &SvmConfig<T>,
    weighted_validation: bool,
    rng: &mut R,
) -> Result<(T, Vec<T>), LearnError> {
    if grid.is_empty() {
        return Err(LearnError::InvalidHyperparameter("empty lambda grid".into()));
    }
    let mut units: Vec<usize> = sample.iter_included().collect();
    if units.is_empty() {
        return Err(LearnError::EmptySample);
    }
    let folds = folds.max(2).min(units.len());
    // Seeded shuffle, then round-robin fold assignment.
    for i in (1..units.len()).rev() {
        let j = rng.gen_range(0..=i);
        units.swap(i, j);
    }

    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = SvmConfig {
            lambda,
            restarts: 1,
            ..base.clone()
        };
        let mut num = T::zero();
        let mut den = T::zero();
        for fold in 0..folds {
            let train: Vec<usize> = units
                .iter()
                .enumerate()
                .filter_map(|(k, &u)| (k % folds != fold).then_some(u))
                .collect();
            let held: Vec<usize> = units
                .iter()
                .enumerate()
                .filter_map(|(k, &u)| (k % folds == fold).then_some(u))
                .collect();
            if train.is_empty() || held.is_empty() {
                continue;
            }
            let problem = SvmProblem::build(pop, &train, pi, cfg.degree, pop.len())?;
            let (theta, b) = run_subgradient(&problem, &cfg, vec![T::zero(); problem.dim])?;
            let model = LinearModel {
                theta,
                b,
                degree: cfg.degree,
                lambda,
                dim: pop.dim(),
            };
            for &u in &held {
                let weight = if weighted_validation {
                    T::one() / pi[u]
                } else {
                    T::one()
                };
                den = den + weight;
                if model.classify(pop.row(u)) != pop.label(u) {
                    num = num + weight;
                }
            }
        }
        scores.push(if den > T::zero() { num / den } else { T::one() });
    }
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    Ok((grid[best], scores))
}

/// Binary decision tree with axis-aligned splits (`x[feature] <=
/// threshold` goes left) and leaf labels in `{-1, +1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode<T> {
    Leaf {
        label: i8,
    },
    Split {
        feature: usize,
        threshold: T,
        left: Box<TreeNode<T>>,
        right: Box<TreeNode<T>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel<T> {
    pub root: TreeNode<T>,
    pub dim: usize,
    pub max_depth: usize,
    pub min_leaf_weight: T,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeConfig<T> {
    pub max_depth: usize,
    pub min_leaf_weight: T,
}

impl<T: Real> Default for TreeConfig<T> {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf_weight: T::one(),
        }
    }
}

impl<T: Real> TreeModel<T> {
    pub fn predict(&self, x: &[T]) -> Result<i8, LearnError> {
        if x.len() != self.dim {
            return Err(LearnError::DimensionMismatch {
                got: x.len(),
                want: self.dim,
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { label } => return Ok(*label),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec<T>(node: &TreeNode<T>) -> usize {
            match node {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + rec(left).max(rec(right)),
            }
        }
        rec(&self.root)
    }
}

impl<T: Real> Classifier<T> for TreeModel<T> {
    fn classify(&self, x: &[T]) -> i8 {
        self.predict(x).expect("feature dimension matches model")
    }
}

/// Weighted Gini impurity of a node given the positive and total mass.
fn gini<T: Real>(w_pos: T, w_total: T) -> T {
    if w_total <= T::zero() {
        return T::zero();
    }
    let q = w_pos / w_total;
    let one = T::one();
    one - q * q - (one - q) * (one - q)
}

/// Grows a CART-style tree on the sampled units, each carrying HT mass
/// `1 / pi_i`. Splits greedily minimize the total weighted child
/// impurity; ties break to the lowest feature index and then the lowest
/// threshold. Leaf labels are the sign of the weighted label sum with
/// ties to `+1`. Training is deterministic given data and
/// hyperparameters.
pub fn train_weighted_tree<T: Real>(
    pop: &Population<T>,
    sample: &SampleIndicator,
    pi: &[T],
    cfg: &TreeConfig<T>,
) -> Result<TreeModel<T>, LearnError> {
    if sample.n_pop() != pop.len() {
        return Err(LearnError::SampleMismatch {
            sample: sample.n_pop(),
            population: pop.len(),
        });
    }
    let units: Vec<usize> = sample.iter_included().collect();
    if units.is_empty() {
        return Err(LearnError::EmptySample);
    }
    let mut weights = vec![T::zero(); pop.len()];
    for &i in &units {
        if !(pi[i] > T::zero()) {
            return Err(LearnError::WeightUndefined {
                index: i,
                value: pi[i].to_f64().unwrap_or(f64::NAN),
            });
        }
        weights[i] = T::one() / pi[i];
    }
    let root = grow(pop, &units, &weights, cfg, 0);
    Ok(TreeModel {
        root,
        dim: pop.dim(),
        max_depth: cfg.max_depth,
        min_leaf_weight: cfg.min_leaf_weight,
    })
}

fn node_masses<T: Real>(pop: &Population<T>, units: &[usize], weights: &[T]) -> (T, T) {
    let mut w_pos = T::zero();
    let mut w_total = T::zero();
    for &i in units {
        w_total = w_total + weights[i];
        if pop.label(i) == 1 {
            w_pos = w_pos + weights[i];
        }
    }
    (w_pos, w_total)
}

fn leaf_label<T: Real>(w_pos: T, w_total: T) -> i8 {
    // Sign of the weighted label sum w_pos - (w_total - w_pos); ties -> +1.
    if w_pos + w_pos >= w_total {
        1
    } else {
        -1
    }
}

fn grow<T: Real>(
    pop: &Population<T>,
    units: &[usize],
    weights: &[T],
    cfg: &TreeConfig<T>,
    depth: usize,
) -> TreeNode<T> {
    let (w_pos, w_total) = node_masses(pop, units, weights);
    let parent_impurity = gini(w_pos, w_total) * w_total;
    let label = leaf_label(w_pos, w_total);
    if depth >= cfg.max_depth || units.len() < 2 || parent_impurity <= T::zero() {
        return TreeNode::Leaf { label };
    }

    let mut best: Option<(T, usize, T)> = None; // (child impurity, feature, threshold)
    let mut order: Vec<usize> = Vec::new();
    for feature in 0..pop.dim() {
        order.clear();
        order.extend_from_slice(units);
        order.sort_by(|&a, &b| {
            pop.row(a)[feature]
                .partial_cmp(&pop.row(b)[feature])
                .expect("finite features")
        });
        let mut left_pos = T::zero();
        let mut left_total = T::zero();
        for k in 0..order.len() - 1 {
            let i = order[k];
            left_total = left_total + weights[i];
            if pop.label(i) == 1 {
                left_pos = left_pos + weights[i];
            }
            let here = pop.row(i)[feature];
            let next = pop.row(order[k + 1])[feature];
            if here == next {
                continue; // no boundary between equal values
            }
            let right_total = w_total - left_total;
            if left_total < cfg.min_leaf_weight || right_total < cfg.min_leaf_weight {
                continue;
            }
            let right_pos = w_pos - left_pos;
            let child = gini(left_pos, left_total) * left_total
                + gini(right_pos, right_total) * right_total;
            let threshold = (here + next) / real::<T>(2.0);
            // Strict improvement keeps the first (lowest feature, lowest
            // threshold) among equally good splits.
            if best.as_ref().map_or(true, |&(b, _, _)| child < b) {
                best = Some((child, feature, threshold));
            }
        }
    }

    match best {
        Some((child_impurity, feature, threshold)) if child_impurity < parent_impurity => {
            let (left_units, right_units): (Vec<usize>, Vec<usize>) = units
                .iter()
                .partition(|&&i| pop.row(i)[feature] <= threshold);
            let left = grow(pop, &left_units, weights, cfg, depth + 1);
            let right = grow(pop, &right_units, weights, cfg, depth + 1);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
        _ => TreeNode::Leaf { label },
    }
}

/// Axis-aligned decision stump: `polarity` if `x[feature] <= threshold`,
/// the opposite label otherwise. The cheap finite classifier family used
/// by the bound validation suites.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Stump<T> {
    pub feature: usize,
    pub threshold: T,
    pub polarity: i8,
}

impl<T: Real> Classifier<T> for Stump<T> {
    fn classify(&self, x: &[T]) -> i8 {
        if x[self.feature] <= self.threshold {
            self.polarity
        } else {
            -self.polarity
        }
    }
}

/// The stump grid over one feature of a population: thresholds below,
/// between and above the observed values, at the given polarity. On `N`
/// distinct values this yields `N + 1` distinct classifiers.
pub fn stump_grid<T: Real>(pop: &Population<T>, feature: usize, polarity: i8) -> Vec<Stump<T>> {
    let mut values: Vec<T> = (0..pop.len()).map(|i| pop.row(i)[feature]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    values.dedup();
    let mut thresholds = Vec::with_capacity(values.len() + 1);
    thresholds.push(values[0] - T::one());
    for w in values.windows(2) {
        thresholds.push((w[0] + w[1]) / real::<T>(2.0));
    }
    thresholds.push(values[values.len() - 1] + T::one());
    thresholds
        .into_iter()
        .map(|threshold| Stump {
            feature,
            threshold,
            polarity,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn feature_expansion_examples() {
        assert_eq!(feature_expand(&[3.0, -1.0], 1).unwrap(), vec![3.0, -1.0]);
        assert_eq!(
            feature_expand(&[3.0, -1.0], 2).unwrap(),
            vec![3.0, -1.0, 9.0, 1.0, -3.0]
        );
        assert_eq!(feature_expand(&[0.0, 0.0], 2).unwrap(), vec![0.0; 5]);
        assert!(matches!(
            feature_expand(&[1.0], 3),
            Err(LearnError::UnsupportedDegree(3))
        ));
        assert_eq!(expanded_dim(10, 2), 65);
    }

    fn separable_population() -> Population<f64> {
        Population::new(
            vec![vec![-2.0, 0.0], vec![-1.5, 1.0], vec![1.5, 0.5], vec![2.0, -0.5]],
            vec![-1, -1, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn svm_fits_separable_data() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let pi = vec![1.0; 4];
        let cfg = SvmConfig {
            lambda: 1e-9,
            degree: 1,
            epochs: 2000,
            ..SvmConfig::default()
        };
        let model = train_weighted_svm(&pop, &sample, &pi, &cfg, &mut rng(1)).unwrap();
        for i in 0..4 {
            assert_eq!(model.classify(pop.row(i)), pop.label(i));
        }
    }

    #[test]
    fn halved_weights_with_scaled_lambda_give_same_model() {
        // Halving every pi doubles the loss term; doubling lambda then
        // scales the whole objective by two, so the argmin is unchanged.
        // Every subgradient doubles with it, so running the scaled problem
        // at half the step size must retrace the same trajectory; the
        // decision vectors agree well within 1e-4.
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let cfg_a = SvmConfig {
            lambda: 1e-2,
            degree: 1,
            epochs: 4000,
            restarts: 1,
            eta0: 0.2,
            ..SvmConfig::default()
        };
        let cfg_b = SvmConfig {
            lambda: 2e-2,
            eta0: 0.1,
            ..cfg_a.clone()
        };
        let pi_a = vec![0.8; 4];
        let pi_b = vec![0.4; 4];
        let a = train_weighted_svm(&pop, &sample, &pi_a, &cfg_a, &mut rng(2)).unwrap();
        let b = train_weighted_svm(&pop, &sample, &pi_b, &cfg_b, &mut rng(2)).unwrap();
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
        assert!((a.b - b.b).abs() < 1e-4);
        // The objectives themselves differ by exactly the factor two.
        let model_a_obj = svm_objective(&pop, &sample, &pi_a, &a).unwrap();
        let mut a_in_b = a.clone();
        a_in_b.lambda = cfg_b.lambda;
        let model_b_obj = svm_objective(&pop, &sample, &pi_b, &a_in_b).unwrap();
        assert!((model_b_obj - 2.0 * model_a_obj).abs() < 1e-12);
    }

    #[test]
    fn restarts_agree_on_the_convex_objective() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let pi = vec![0.5; 4];
        let cfg = SvmConfig {
            lambda: 1e-2,
            degree: 2,
            epochs: 3000,
            restarts: 1,
            eta0: 0.2,
            ..SvmConfig::default()
        };
        let mut objectives = Vec::new();
        for seed in 0..5 {
            let model = train_weighted_svm(&pop, &sample, &pi, &cfg, &mut rng(seed)).unwrap();
            objectives.push(svm_objective(&pop, &sample, &pi, &model).unwrap());
        }
        let best = objectives.iter().copied().fold(f64::INFINITY, f64::min);
        for o in objectives {
            assert!(o <= best * 1.01 + 1e-12, "{o} vs best {best}");
        }
    }

    #[test]
    fn averaged_objective_decreases_with_the_epoch_budget() {
        // The averaged iterate improves (non-strictly) as the budget grows:
        // same zero start, increasing epochs, non-increasing objective.
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let pi = vec![0.5; 4];
        let budgets = [25usize, 100, 400, 800, 1600, 3200, 6400];
        let trace: Vec<f64> = budgets
            .iter()
            .map(|&epochs| {
                let cfg = SvmConfig {
                    lambda: 1e-2,
                    degree: 2,
                    epochs,
                    restarts: 1,
                    eta0: 0.1,
                    ..SvmConfig::default()
                };
                let model = train_weighted_svm(&pop, &sample, &pi, &cfg, &mut rng(0)).unwrap();
                svm_objective(&pop, &sample, &pi, &model).unwrap()
            })
            .collect();
        // Once averaging has absorbed the transient (from 400 epochs on)
        // the objective is non-increasing, and the final averaged iterate
        // beats the earliest one.
        for w in trace[2..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "tail objective rose: {trace:?}");
        }
        assert!(trace.last().unwrap() <= trace.first().unwrap(), "{trace:?}");
    }

    #[test]
    fn splits_never_increase_weighted_impurity() {
        // Rebuild the impurity bookkeeping from the fitted tree and check
        // every split against its parent.
        let mut r = rng(31);
        let features: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)])
            .collect();
        let labels: Vec<i8> = features
            .iter()
            .map(|f| {
                // Noisy quadrant labels.
                let noisy = r.gen_range(0.0..1.0) < 0.2;
                let base = if f[0] * f[1] > 0.0 { 1 } else { -1 };
                if noisy {
                    -base
                } else {
                    base
                }
            })
            .collect();
        let pop = Population::new(features, labels).unwrap();
        let sample = SampleIndicator::from_included(60, &(0..60).collect::<Vec<_>>());
        let pi: Vec<f64> = (0..60).map(|_| r.gen_range(0.2..0.9)).collect();
        let model = train_weighted_tree(&pop, &sample, &pi, &TreeConfig::default()).unwrap();

        fn impurity(pop: &Population<f64>, w: &[f64], units: &[usize]) -> f64 {
            let total: f64 = units.iter().map(|&i| w[i]).sum();
            let pos: f64 = units
                .iter()
                .filter(|&&i| pop.label(i) == 1)
                .map(|&i| w[i])
                .sum();
            if total <= 0.0 {
                return 0.0;
            }
            let q = pos / total;
            (1.0 - q * q - (1.0 - q) * (1.0 - q)) * total
        }
        fn walk(
            node: &TreeNode<f64>,
            pop: &Population<f64>,
            w: &[f64],
            units: Vec<usize>,
        ) {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = node
            {
                let (l, r): (Vec<usize>, Vec<usize>) = units
                    .iter()
                    .partition(|&&i| pop.row(i)[*feature] <= *threshold);
                let parent = impurity(pop, w, &units);
                let children = impurity(pop, w, &l) + impurity(pop, w, &r);
                assert!(
                    children <= parent + 1e-12,
                    "split raised impurity: {children} > {parent}"
                );
                walk(left, pop, w, l);
                walk(right, pop, w, r);
            }
        }
        let w: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
        walk(&model.root, &pop, &w, (0..60).collect());
    }

    #[test]
    fn unit_weights_reduce_to_plain_hinge_objective() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let pi = vec![1.0; 4];
        let model = LinearModel {
            theta: vec![0.5, -0.25],
            b: 0.1,
            degree: 1,
            lambda: 0.5,
            dim: 2,
        };
        let got = svm_objective(&pop, &sample, &pi, &model).unwrap();
        // Plain regularized empirical hinge loss, written out directly.
        let mut expect = 0.0;
        for i in 0..4 {
            let x = pop.row(i);
            let margin = pop.label(i) as f64 * (0.5 * x[0] - 0.25 * x[1] - 0.1);
            expect += (1.0 - margin).max(0.0) / 4.0;
        }
        expect += 0.5 * (0.5f64.powi(2) + 0.25f64.powi(2));
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn svm_diverges_to_training_failure_on_huge_steps() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let pi = vec![1.0; 4];
        let cfg = SvmConfig {
            lambda: 1e30,
            degree: 1,
            eta0: 1e300,
            epochs: 200,
            ..SvmConfig::default()
        };
        assert!(matches!(
            train_weighted_svm(&pop, &sample, &pi, &cfg, &mut rng(0)),
            Err(LearnError::TrainingFailure { .. })
        ));
    }

    #[test]
    fn tree_single_unit_is_a_leaf() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[2]);
        let pi = vec![0.5; 4];
        let model = train_weighted_tree(&pop, &sample, &pi, &TreeConfig::default()).unwrap();
        assert_eq!(model.depth(), 0);
        assert_eq!(model.classify(&[0.0, 0.0]), 1);
    }

    #[test]
    fn tree_equal_weights_match_unweighted_cart() {
        let pop = Population::new(
            vec![
                vec![0.1, 3.0],
                vec![0.9, 2.0],
                vec![0.4, -1.0],
                vec![0.7, 0.5],
                vec![0.2, 1.5],
                vec![0.6, -2.0],
            ],
            vec![-1, 1, -1, 1, -1, 1],
        )
        .unwrap();
        let sample = SampleIndicator::from_included(6, &[0, 1, 2, 3, 4, 5]);
        let cfg = TreeConfig {
            max_depth: 4,
            min_leaf_weight: 0.0,
        };
        let equal = train_weighted_tree(&pop, &sample, &vec![0.25; 6], &cfg).unwrap();
        let unit = train_weighted_tree(&pop, &sample, &vec![1.0; 6], &cfg).unwrap();
        assert_eq!(equal.root, unit.root);
    }

    #[test]
    fn tree_training_is_deterministic() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[0, 1, 2, 3]);
        let pi = vec![0.7; 4];
        let a = train_weighted_tree(&pop, &sample, &pi, &TreeConfig::default()).unwrap();
        let b = train_weighted_tree(&pop, &sample, &pi, &TreeConfig::default()).unwrap();
        assert_eq!(a.root, b.root);
    }

    #[test]
    fn tree_rejects_empty_sample() {
        let pop = separable_population();
        let sample = SampleIndicator::from_included(4, &[]);
        assert!(matches!(
            train_weighted_tree(&pop, &sample, &[1.0; 4], &TreeConfig::default()),
            Err(LearnError::EmptySample)
        ));
    }

    #[test]
    fn pure_node_has_zero_gini() {
        assert_eq!(gini(1.0f64, 1.0), 0.0);
        assert_eq!(gini(0.0f64, 1.0), 0.0);
        assert!((gini(0.5f64, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn predict_conventions() {
        let zero = LinearModel {
            theta: vec![0.0, 0.0],
            b: 0.0,
            degree: 1,
            lambda: 0.0,
            dim: 2,
        };
        assert_eq!(zero.predict(&[3.0, -4.0]).unwrap(), 1);

        let leaf = TreeModel {
            root: TreeNode::Leaf { label: -1 },
            dim: 2,
            max_depth: 8,
            min_leaf_weight: 1.0,
        };
        assert_eq!(leaf.predict(&[9.0, 9.0]).unwrap(), -1);

        // Positive joint rescaling of (theta, b) leaves predictions alone.
        let m = LinearModel {
            theta: vec![0.5, -1.0],
            b: 0.25,
            degree: 1,
            lambda: 0.0,
            dim: 2,
        };
        let scaled = LinearModel {
            theta: vec![5.0, -10.0],
            b: 2.5,
            ..m.clone()
        };
        let mut r = rng(9);
        for _ in 0..50 {
            let x = [r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)];
            assert_eq!(m.predict(&x).unwrap(), scaled.predict(&x).unwrap());
        }

        assert!(matches!(
            m.predict(&[1.0]),
            Err(LearnError::DimensionMismatch { got: 1, want: 2 })
        ));
        assert!(matches!(
            leaf.predict(&[1.0, 2.0, 3.0]),
            Err(LearnError::DimensionMismatch { got: 3, want: 2 })
        ));
    }

    #[test]
    fn stump_grid_has_n_plus_one_members() {
        let pop =
            Population::new((0..10).map(|i| vec![i as f64]).collect(), vec![1; 10]).unwrap();
        let grid = stump_grid(&pop, 0, 1);
        assert_eq!(grid.len(), 11);
    }

    #[test]
    fn model_serialization_round_trip() {
        let m = LinearModel {
            theta: vec![0.5, -1.0],
            b: 0.25,
            degree: 2,
            lambda: 0.01,
            dim: 1,
        };
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"theta\""));
        let back: LinearModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.theta, m.theta);

        let t = TreeModel {
            root: TreeNode::Split {
                feature: 0,
                threshold: 0.5,
                left: Box::new(TreeNode::Leaf { label: -1 }),
                right: Box::new(TreeNode::Leaf { label: 1 }),
            },
            dim: 1,
            max_depth: 8,
            min_leaf_weight: 1.0,
        };
        let json = serde_json::to_string(&t).unwrap();
        let back: TreeModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.root, t.root);
    }
}
