//! Conversions between canonical Poisson parameters `p` and first-order
//! inclusion probabilities `pi` of the rejective (conditional Poisson)
//! design.
//!
//! The exact map is `pi_i = w_i e_{n-1}(w_{-i}) / e_n(w)` with odds
//! `w_i = p_i / (1 - p_i)` and `e_k` the elementary symmetric
//! polynomials. All computations run on the equivalent Poisson-binomial
//! pmf rows (the symmetric-function rows normalized per unit by the
//! Bernoulli complements), which keeps every entry in `[0, 1]`:
//!
//!   `pi_i = p_i * P_{-i}(n - 1) / P(n)`
//!
//! where `P` is the pmf of the Poisson sample size and `P_{-i}` the pmf
//! with unit `i` removed. Leave-one-out rows are obtained from prefix and
//! suffix pmf tables combined by convolution, so no cancellation-prone
//! subtraction is involved; the suffix table is checkpointed every
//! `sqrt(N)` rows to keep memory at `O(sqrt(N) * n)`. A log-domain twin
//! of the same scheme handles populations where the linear pmf
//! underflows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{kahan_sum, real, real_usize, Real};

#[derive(Debug, Error)]
pub enum InclusionError {
    #[error("inclusion parameter out of range at index {index}: {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("sample size {n} out of range for population of {n_pop}")]
    InvalidSize { n: usize, n_pop: usize },
    #[error("probabilities sum to {sum}, expected the integer size {want}")]
    SumNotSize { sum: f64, want: f64 },
    #[error("symmetric-function recursion lost all precision: {detail}")]
    NumericInstability { detail: String },
    #[error("canonical solver did not converge in {iterations} iterations (residual {residual:e})")]
    SolverFailure { residual: f64, iterations: usize },
}

/// First-order inclusion probability vector of a fixed-size design,
/// together with the implied size `n = sum(pi)` and the weight-imbalance
/// factor `kappa = (n/N) / min_i pi_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InclusionProbs<T> {
    pi: Vec<T>,
    n: usize,
    kappa: T,
}

impl<T: Real> InclusionProbs<T> {
    /// Builds the vector, checking `pi_i` in `(0, 1]` and that the sum is
    /// an integer size within `1e-6 * n`.
    pub fn new(pi: Vec<T>) -> Result<Self, InclusionError> {
        for (i, &v) in pi.iter().enumerate() {
            if !(v > T::zero() && v <= T::one()) {
                return Err(InclusionError::InvalidProbability {
                    index: i,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let sum = kahan_sum(pi.iter().copied()).to_f64().unwrap_or(f64::NAN);
        let n = sum.round();
        if n < 1.0 || (sum - n).abs() > 1e-6 * n.max(1.0) {
            return Err(InclusionError::SumNotSize { sum, want: n });
        }
        let n = n as usize;
        let min = pi.iter().copied().fold(T::infinity(), T::min);
        let kappa = real_usize::<T>(n) / real_usize::<T>(pi.len()) / min;
        Ok(Self { pi, n, kappa })
    }

    pub fn pi(&self) -> &[T] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// The fixed sample size `n = sum(pi)`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `kappa = (n/N) / min_i pi_i`; equals 1 for equal weights and is
    /// at least 1 whenever `sum(pi) = n`.
    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn min_pi(&self) -> T {
        self.pi.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.pi
    }
}

/// Poisson sample-size dispersion diagnostics for a `(p, pi)` pair:
/// `d = sum p(1-p)`, `d_star = sum pi(1-pi)` and the tilted means
/// `p_tilde = sum p^2(1-p) / d`, `pi_tilde = sum pi^2(1-pi) / d_star`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoissonDiagnostics<T> {
    pub d: T,
    pub d_star: T,
    pub p_tilde: T,
    pub pi_tilde: T,
}

impl<T: Real> PoissonDiagnostics<T> {
    pub fn new(p: &[T], pi: &[T]) -> Self {
        let (d, p_tilde) = dispersion(p);
        let (d_star, pi_tilde) = dispersion(pi);
        Self {
            d,
            d_star,
            p_tilde,
            pi_tilde,
        }
    }
}

fn dispersion<T: Real>(p: &[T]) -> (T, T) {
    let d = kahan_sum(p.iter().map(|&x| x * (T::one() - x)));
    let tilted = kahan_sum(p.iter().map(|&x| x * x * (T::one() - x)));
    (d, if d > T::zero() { tilted / d } else { T::zero() })
}

fn check_open_interval<T: Real>(p: &[T]) -> Result<(), InclusionError> {
    for (i, &v) in p.iter().enumerate() {
        if !(v > T::zero() && v < T::one()) {
            return Err(InclusionError::InvalidProbability {
                index: i,
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

// --- Poisson-binomial pmf rows, linear domain -------------------------------

/// Multiplies one Bernoulli(`p`) into a pmf row truncated to sizes
/// `0..cap_entries-1`.
fn pmf_push<T: Real>(row: &mut Vec<T>, p: T, cap_entries: usize) {
    let q = T::one() - p;
    let new_len = (row.len() + 1).min(cap_entries);
    row.resize(new_len, T::zero());
    for k in (1..new_len).rev() {
        row[k] = row[k] * q + row[k - 1] * p;
    }
    row[0] = row[0] * q;
}

fn pmf_convolve_at<T: Real>(a: &[T], b: &[T], target: usize) -> T {
    let lo = target.saturating_sub(b.len() - 1);
    let hi = target.min(a.len() - 1);
    if lo > hi {
        return T::zero();
    }
    kahan_sum((lo..=hi).map(|k| a[k] * b[target - k]))
}

// --- Log-domain twin ---------------------------------------------------------

fn ln_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_pmf_push<T: Real>(row: &mut Vec<T>, p: T, cap_entries: usize) {
    let lp = p.ln();
    let lq = (T::one() - p).ln();
    let new_len = (row.len() + 1).min(cap_entries);
    row.resize(new_len, T::neg_infinity());
    for k in (1..new_len).rev() {
        row[k] = ln_add_exp(row[k] + lq, row[k - 1] + lp);
    }
    row[0] = row[0] + lq;
}

fn log_pmf_convolve_at<T: Real>(a: &[T], b: &[T], target: usize) -> T {
    let lo = target.saturating_sub(b.len() - 1);
    let hi = target.min(a.len() - 1);
    let mut acc = T::neg_infinity();
    if lo > hi {
        return acc;
    }
    for k in lo..=hi {
        acc = ln_add_exp(acc, a[k] + b[target - k]);
    }
    acc
}

// --- Exact inclusion probabilities -------------------------------------------

enum Domain {
    Linear,
    Log,
}

fn pi_from_p_in_domain<T: Real>(p: &[T], n: usize, domain: Domain) -> Option<Vec<T>> {
    let n_pop = p.len();
    let cap = n + 1;
    let (zero, one): (T, T) = match domain {
        Domain::Linear => (T::zero(), T::one()),
        Domain::Log => (T::neg_infinity(), T::zero()),
    };
    let push = |row: &mut Vec<T>, pi: T| match domain {
        Domain::Linear => pmf_push(row, pi, cap),
        Domain::Log => log_pmf_push(row, pi, cap),
    };

    // Full-population pmf at n.
    let mut full = vec![one];
    for &pi in p {
        push(&mut full, pi);
    }
    let p_full_n = *full.get(n)?;
    if p_full_n <= zero && !matches!(domain, Domain::Log) {
        return None;
    }
    if matches!(domain, Domain::Log) && p_full_n == T::neg_infinity() {
        return None;
    }

    // Suffix checkpoints every `block` rows; `suffix(i)` is the pmf of
    // units i..N.
    let block = (n_pop as f64).sqrt().ceil() as usize;
    let block = block.max(1);
    let mut checkpoints: Vec<Vec<T>> = vec![Vec::new(); n_pop / block + 1];
    let mut row = vec![one];
    for i in (0..n_pop).rev() {
        push(&mut row, p[i]);
        if i % block == 0 {
            checkpoints[i / block] = row.clone();
        }
    }

    let mut out = vec![zero; n_pop];
    let mut prefix = vec![one];
    // Rows of the current block, descending suffix index.
    let mut cache: Vec<Vec<T>> = Vec::new();
    let mut cache_start = usize::MAX; // suffix index of cache.last()

    for i in 0..n_pop {
        let j = i + 1; // need suffix(j)
        if cache_start > j || cache_start + cache.len() <= j {
            // Rebuild the cache for the block-aligned range containing j.
            let start = (j / block) * block;
            let end = (start + block).min(n_pop);
            let mut r = if end == n_pop {
                vec![one]
            } else {
                // `end` is a multiple of `block` here, so a checkpoint exists.
                checkpoints[end / block].clone()
            };
            cache.clear();
            for jj in (start..=end).rev() {
                if jj < end {
                    push(&mut r, p[jj]);
                }
                cache.push(r.clone());
            }
            cache.reverse(); // cache[k] = suffix(start + k)
            cache_start = start;
        }
        let suffix = &cache[j - cache_start];
        let conv = match domain {
            Domain::Linear => pmf_convolve_at(&prefix, suffix, n - 1),
            Domain::Log => log_pmf_convolve_at(&prefix, suffix, n - 1),
        };
        out[i] = match domain {
            Domain::Linear => p[i] * conv / p_full_n,
            Domain::Log => (p[i].ln() + conv - p_full_n).exp(),
        };
        push(&mut prefix, p[i]);
    }
    Some(out)
}

/// Exact first-order inclusion probabilities of the rejective design of
/// size `n` with Poisson parameters `p`.
///
/// `p` does not need to be canonical; any vector in `(0,1)^N` defines the
/// conditional design. The returned vector sums to `n` within `1e-9 * n`.
pub fn exact_pi_from_p<T: Real>(p: &[T], n: usize) -> Result<InclusionProbs<T>, InclusionError> {
    check_open_interval(p)?;
    if n == 0 || n > p.len() {
        return Err(InclusionError::InvalidSize { n, n_pop: p.len() });
    }

    let accept = |pi: &[T]| {
        pi.iter().all(|&x| x.is_finite() && x > T::zero()) && {
            let sum = kahan_sum(pi.iter().copied()).to_f64().unwrap_or(f64::NAN);
            (sum - n as f64).abs() <= 1e-9 * (n as f64).max(1.0)
        }
    };

    if let Some(pi) = pi_from_p_in_domain(p, n, Domain::Linear) {
        if accept(&pi) {
            return finish_pi(pi);
        }
    }
    // Log-domain fallback for populations where the linear pmf underflows.
    if let Some(pi) = pi_from_p_in_domain(p, n, Domain::Log) {
        if accept(&pi) {
            return finish_pi(pi);
        }
    }
    Err(InclusionError::NumericInstability {
        detail: format!("pmf mass at n = {n} vanished in both domains"),
    })
}

fn finish_pi<T: Real>(mut pi: Vec<T>) -> Result<InclusionProbs<T>, InclusionError> {
    for v in pi.iter_mut() {
        *v = v.min(T::one());
    }
    InclusionProbs::new(pi)
}

// --- Canonical parameter solver ----------------------------------------------

/// Rescales an odds vector `w` onto the probability vector `p_i = c w_i /
/// (1 + c w_i)` whose sum is exactly `n`; `c` is found by monotone
/// geometric bisection. This picks the canonical representative of the
/// equivalence class `{w' : w' = c w}`.
pub fn normalize_odds_to_size<T: Real>(w: &[T], n: usize) -> Result<Vec<T>, InclusionError> {
    let n_pop = w.len();
    if n == 0 || n >= n_pop {
        return Err(InclusionError::InvalidSize { n, n_pop });
    }
    let target = real_usize::<T>(n);
    let eval = |c: T| kahan_sum(w.iter().map(|&wi| c * wi / (T::one() + c * wi)));

    let mut lo = T::one();
    let mut hi = T::one();
    let grow = real::<T>(4.0);
    for _ in 0..4096 {
        if eval(lo) <= target {
            break;
        }
        lo = lo / grow;
    }
    for _ in 0..4096 {
        if eval(hi) >= target {
            break;
        }
        hi = hi * grow;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    let c = (lo * hi).sqrt();
    Ok(w.iter().map(|&wi| c * wi / (T::one() + c * wi)).collect())
}

/// Solves for the canonical Poisson parameters `p` (with `sum(p) = n`)
/// whose rejective design has first-order inclusion probabilities
/// `pi_target`, by damped multiplicative fixed-point iteration on the
/// odds.
pub fn solve_canonical_p<T: Real>(
    pi_target: &[T],
    tol: T,
    max_iter: usize,
) -> Result<Vec<T>, InclusionError> {
    check_open_interval(pi_target)?;
    let sum = kahan_sum(pi_target.iter().copied())
        .to_f64()
        .unwrap_or(f64::NAN);
    let n_real = sum.round();
    if (sum - n_real).abs() > 1e-6 * n_real.max(1.0) {
        return Err(InclusionError::SumNotSize {
            sum,
            want: n_real,
        });
    }
    let n = n_real as usize;
    if n == 0 || n >= pi_target.len() {
        return Err(InclusionError::InvalidSize {
            n,
            n_pop: pi_target.len(),
        });
    }

    let mut p = pi_target.to_vec();
    let mut damp = T::one();
    let half = real::<T>(0.5);
    let mut prev_resid = T::infinity();
    let mut resid = T::infinity();

    for _ in 0..max_iter {
        let current = exact_pi_from_p(&p, n)?;
        resid = current
            .pi()
            .iter()
            .zip(pi_target)
            .map(|(&cur, &tgt)| (cur - tgt).abs())
            .fold(T::zero(), T::max);
        if resid <= tol {
            return Ok(p);
        }
        if resid > prev_resid {
            damp = half; // multiplicative overshoot: keep half-steps from here on
        }
        prev_resid = resid;

        let w: Vec<T> = p
            .iter()
            .zip(current.pi())
            .zip(pi_target)
            .map(|((&pi_p, &cur), &tgt)| {
                let odds = pi_p / (T::one() - pi_p);
                odds * (tgt / cur).powf(damp)
            })
            .collect();
        p = normalize_odds_to_size(&w, n)?;
    }
    Err(InclusionError::SolverFailure {
        residual: resid.to_f64().unwrap_or(f64::NAN),
        iterations: max_iter,
    })
}

pub const DEFAULT_SOLVER_TOL: f64 = 1e-9;
pub const DEFAULT_SOLVER_MAX_ITER: usize = 10_000;

// --- Asymptotic (Hajek) relations --------------------------------------------

/// A first-order approximation of one side of the `p <-> pi` relation,
/// with the remainder term dropped. `in_regime` is false when the
/// dispersion is below 1, where the approximation has no support.
#[derive(Clone, Debug)]
pub struct HajekApproximation<T> {
    pub values: Vec<T>,
    pub dispersion: T,
    pub in_regime: bool,
}

/// First-order approximation of the rejective inclusion probabilities
/// from Poisson parameters: solves
/// `p_i (1 - pi_i) = pi_i (1 - p_i) (1 - (p_tilde - p_i)/d)` for `pi_i`.
pub fn hajek_pi_from_p<T: Real>(p: &[T]) -> HajekApproximation<T> {
    let (d, p_tilde) = dispersion(p);
    let values = p
        .iter()
        .map(|&pi_p| {
            let c = T::one() - (p_tilde - pi_p) / d;
            pi_p / (pi_p + (T::one() - pi_p) * c)
        })
        .collect();
    HajekApproximation {
        values,
        dispersion: d,
        in_regime: d >= T::one(),
    }
}

/// The symmetric direction: approximate canonical `p` from inclusion
/// probabilities `pi` via `pi_i (1 - p_i) = p_i (1 - pi_i)
/// (1 - (pi_tilde - pi_i)/d_star)`.
pub fn hajek_p_from_pi<T: Real>(pi: &[T]) -> HajekApproximation<T> {
    let (d_star, pi_tilde) = dispersion(pi);
    let values = pi
        .iter()
        .map(|&x| {
            let c = T::one() - (pi_tilde - x) / d_star;
            x / (x + (T::one() - x) * c)
        })
        .collect();
    HajekApproximation {
        values,
        dispersion: d_star,
        in_regime: d_star >= T::one(),
    }
}

// --- Bias lemma ---------------------------------------------------------------

/// Per-unit and aggregate bounds on the gap between inverse canonical
/// parameters and inverse inclusion probabilities:
/// `|1/pi_i - 1/p_i| <= (6/d) (1 - pi_i)/pi_i` for `d >= 1`, and in
/// aggregate `(1/N) sum |1/p_i - 1/pi_i| <= 6 N kappa / (n d)`.
#[derive(Clone, Debug, Serialize)]
pub struct WeightGapReport<T> {
    pub per_unit_gap: Vec<T>,
    pub per_unit_bound: Vec<T>,
    pub violations: usize,
    pub aggregate_gap: T,
    pub aggregate_bound: T,
    pub dispersion: T,
    pub in_regime: bool,
}

pub fn weight_gap_bound<T: Real>(p: &[T], probs: &InclusionProbs<T>) -> WeightGapReport<T> {
    let (d, _) = dispersion(p);
    let pi = probs.pi();
    let six = real::<T>(6.0);
    let per_unit_gap: Vec<T> = p
        .iter()
        .zip(pi)
        .map(|(&pp, &qq)| (T::one() / qq - T::one() / pp).abs())
        .collect();
    let per_unit_bound: Vec<T> = pi
        .iter()
        .map(|&qq| six / d * (T::one() - qq) / qq)
        .collect();
    let violations = per_unit_gap
        .iter()
        .zip(&per_unit_bound)
        .filter(|(g, b)| g > b)
        .count();
    let n_pop = real_usize::<T>(p.len());
    let aggregate_gap = kahan_sum(per_unit_gap.iter().copied()) / n_pop;
    let aggregate_bound =
        six * n_pop * probs.kappa() / (real_usize::<T>(probs.n()) * d);
    WeightGapReport {
        per_unit_gap,
        per_unit_bound,
        violations,
        aggregate_gap,
        aggregate_bound,
        dispersion: d,
        in_regime: d >= T::one(),
    }
}

/// Repeats a base parameter vector `m` times; the fixed size scales with
/// `m`, the per-unit values stay put. Used to realize the growing
/// dispersion regime of the asymptotic relations.
pub fn tile<T: Real>(base: &[T], m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(base.len() * m);
    for _ in 0..m {
        out.extend_from_slice(base);
    }
    out
}
