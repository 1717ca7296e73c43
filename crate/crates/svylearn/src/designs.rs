//! Sampling designs over a finite population.
//!
//! A design is a probability distribution over subsets of the population
//! indices `0..N`. Five schemes are implemented, each both as a random
//! draw procedure and, for `N <= 20`, as an exactly enumerated mass over
//! all `2^N` subsets:
//!
//! * Poisson sampling: independent Bernoulli inclusion, random size;
//! * simple random sampling without replacement (SRSWOR): uniform over
//!   the size-`n` subsets;
//! * rejective (conditional Poisson) sampling: Poisson conditioned on
//!   the sample size being exactly `n`;
//! * stratified sampling: independent SRSWOR within each stratum;
//! * Rao-Sampford sampling: fixed size `n` with first-order inclusion
//!   probabilities exactly equal to a prescribed vector.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inclusion;
use crate::{kahan_sum, real, real_usize, Real};

/// Exact enumeration is limited to populations of this size (`2^N` subsets).
pub const MAX_ENUM_POP: usize = 20;

/// Default rejection budget for accept/reject draw loops.
pub const DEFAULT_MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("inclusion parameter out of (0,1) at index {index}: {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("sample size {n} out of range for population of {n_pop}")]
    InvalidSize { n: usize, n_pop: usize },
    #[error("parameters sum to {got} but the fixed size is {want} (tolerance {tol:e})")]
    SizeMismatch { got: f64, want: f64, tol: f64 },
    #[error("strata do not partition the population of {n_pop}")]
    InvalidStrata { n_pop: usize },
    #[error("stratum {stratum} has size {n_stratum} but requests {n_k} draws")]
    StratumSizeExceeded {
        stratum: usize,
        n_stratum: usize,
        n_k: usize,
    },
    #[error("rejection budget {budget} exhausted (estimated acceptance rate {rate:e})")]
    RejectionBudget { budget: usize, rate: f64 },
    #[error("exact enumeration supports N <= {MAX_ENUM_POP}, got N = {n_pop}")]
    EnumerationTooLarge { n_pop: usize },
    #[error("designs have different population sizes: {a} vs {b}")]
    PopulationMismatch { a: usize, b: usize },
    #[error("enumerated masses sum to {sum}, expected 1")]
    MassNotNormalized { sum: f64 },
    #[error("negative mass {mass} for subset {mask:#b}")]
    NegativeMass { mask: u32, mass: f64 },
    #[error(transparent)]
    Inclusion(#[from] inclusion::InclusionError),
}

/// The indicator vector of a drawn sample: `bits[i]` is whether unit `i`
/// was included.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SampleIndicator {
    bits: Vec<bool>,
    size: usize,
}

impl SampleIndicator {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let size = bits.iter().filter(|&&b| b).count();
        Self { bits, size }
    }

    pub fn from_included(n_pop: usize, included: &[usize]) -> Self {
        let mut bits = vec![false; n_pop];
        for &i in included {
            bits[i] = true;
        }
        Self::from_bits(bits)
    }

    /// Interprets bit `i` of `mask` as the inclusion indicator of unit `i`.
    pub fn from_bitmask(n_pop: usize, mask: u32) -> Self {
        let bits = (0..n_pop).map(|i| mask >> i & 1 == 1).collect();
        Self::from_bits(bits)
    }

    pub fn n_pop(&self) -> usize {
        self.bits.len()
    }

    /// Number of included units, `n(s)`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn iter_included(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Bitmask encoding; only usable for `n_pop <= 32`.
    pub fn bitmask(&self) -> u32 {
        assert!(self.bits.len() <= 32, "bitmask limited to 32 units");
        self.iter_included().fold(0u32, |m, i| m | 1 << i)
    }
}

/// Serializable description of a sampling design.
///
/// JSON layout: `{"kind": "...", "p": [...], "n": ..., "n_pop": ...,
/// "strata": [[...], ...], "n_k": [...]}` with only the fields the kind
/// uses. Rao-Sampford stores its inclusion vector in `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec<T> {
    /// Independent Bernoulli(`p[i]`) inclusion; random sample size.
    Poisson { p: Vec<T> },
    /// Uniform over all size-`n` subsets of `0..n_pop`.
    Srswor { n_pop: usize, n: usize },
    /// Poisson(`p`) conditioned on sample size `n`. `p` must be canonical:
    /// `sum(p) == n`.
    Rejective { p: Vec<T>, n: usize },
    /// Independent SRSWOR of size `n_k[k]` inside each stratum.
    Stratified {
        strata: Vec<Vec<usize>>,
        n_k: Vec<usize>,
    },
    /// Fixed-size design with first-order inclusion probabilities exactly
    /// `p`; requires `sum(p) == n` (integer).
    RaoSampford { p: Vec<T> },
}

fn check_open_unit_interval<T: Real>(p: &[T]) -> Result<(), DesignError> {
    for (i, &v) in p.iter().enumerate() {
        if !(v > T::zero() && v < T::one()) {
            return Err(DesignError::InvalidProbability {
                index: i,
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

fn check_sum_is_size<T: Real>(p: &[T], n: usize, tol: f64) -> Result<(), DesignError> {
    let sum = kahan_sum(p.iter().copied()).to_f64().unwrap_or(f64::NAN);
    if !((sum - n as f64).abs() <= tol) {
        return Err(DesignError::SizeMismatch {
            got: sum,
            want: n as f64,
            tol,
        });
    }
    Ok(())
}

impl<T: Real> DesignSpec<T> {
    pub fn n_pop(&self) -> usize {
        match self {
            DesignSpec::Poisson { p } => p.len(),
            DesignSpec::Srswor { n_pop, .. } => *n_pop,
            DesignSpec::Rejective { p, .. } => p.len(),
            DesignSpec::Stratified { strata, .. } => strata.iter().map(Vec::len).sum(),
            DesignSpec::RaoSampford { p } => p.len(),
        }
    }

    /// `Some(n)` for fixed-size designs, `None` for Poisson.
    pub fn fixed_size(&self) -> Option<usize> {
        match self {
            DesignSpec::Poisson { .. } => None,
            DesignSpec::Srswor { n, .. } => Some(*n),
            DesignSpec::Rejective { n, .. } => Some(*n),
            DesignSpec::Stratified { n_k, .. } => Some(n_k.iter().sum()),
            DesignSpec::RaoSampford { p } => {
                let s = kahan_sum(p.iter().copied()).to_f64().unwrap_or(f64::NAN);
                Some(s.round() as usize)
            }
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        match self {
            DesignSpec::Poisson { p } => check_open_unit_interval(p),
            DesignSpec::Srswor { n_pop, n } => {
                if *n == 0 || *n > *n_pop {
                    return Err(DesignError::InvalidSize {
                        n: *n,
                        n_pop: *n_pop,
                    });
                }
                Ok(())
            }
            DesignSpec::Rejective { p, n } => {
                check_open_unit_interval(p)?;
                if *n == 0 || *n > p.len() {
                    return Err(DesignError::InvalidSize {
                        n: *n,
                        n_pop: p.len(),
                    });
                }
                // Canonical representation: sum(p) = n within solver tolerance.
                check_sum_is_size(p, *n, 1e-6)
            }
            DesignSpec::Stratified { strata, n_k } => {
                let n_pop = self.n_pop();
                let mut seen = vec![false; n_pop];
                for stratum in strata {
                    for &i in stratum {
                        if i >= n_pop || seen[i] {
                            return Err(DesignError::InvalidStrata { n_pop });
                        }
                        seen[i] = true;
                    }
                }
                if !seen.iter().all(|&b| b) || strata.len() != n_k.len() || strata.is_empty() {
                    return Err(DesignError::InvalidStrata { n_pop });
                }
                for (k, (stratum, &nk)) in strata.iter().zip(n_k).enumerate() {
                    if nk == 0 || nk > stratum.len() {
                        return Err(DesignError::StratumSizeExceeded {
                            stratum: k,
                            n_stratum: stratum.len(),
                            n_k: nk,
                        });
                    }
                }
                Ok(())
            }
            DesignSpec::RaoSampford { p } => {
                check_open_unit_interval(p)?;
                let n = self.fixed_size().unwrap();
                if n == 0 || n > p.len() {
                    return Err(DesignError::InvalidSize { n, n_pop: p.len() });
                }
                check_sum_is_size(p, n, 1e-9)
            }
        }
    }

    /// The design's declared first-order inclusion probabilities.
    ///
    /// For rejective designs this runs the exact symmetric-function
    /// computation from canonical parameters; for the other kinds the
    /// closed forms apply.
    pub fn first_order(&self) -> Result<Vec<T>, DesignError> {
        self.validate()?;
        match self {
            DesignSpec::Poisson { p } => Ok(p.clone()),
            DesignSpec::Srswor { n_pop, n } => {
                let pi = real_usize::<T>(*n) / real_usize::<T>(*n_pop);
                Ok(vec![pi; *n_pop])
            }
            DesignSpec::Rejective { p, n } => {
                let probs = inclusion::exact_pi_from_p(p, *n)?;
                Ok(probs.pi().to_vec())
            }
            DesignSpec::Stratified { strata, n_k } => {
                let mut pi = vec![T::zero(); self.n_pop()];
                for (stratum, &nk) in strata.iter().zip(n_k) {
                    let v = real_usize::<T>(nk) / real_usize::<T>(stratum.len());
                    for &i in stratum {
                        pi[i] = v;
                    }
                }
                Ok(pi)
            }
            DesignSpec::RaoSampford { p } => Ok(p.clone()),
        }
    }

    /// Draws one sample. Identical seeds give identical draws.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<SampleIndicator, DesignError> {
        self.draw_with_budget(rng, DEFAULT_MAX_REJECTIONS)
    }

    pub fn draw_with_budget<R: Rng>(
        &self,
        rng: &mut R,
        max_rejections: usize,
    ) -> Result<SampleIndicator, DesignError> {
        match self {
            DesignSpec::Poisson { p } => poisson_draw(p, rng),
            DesignSpec::Srswor { n_pop, n } => srswor_draw(*n_pop, *n, rng),
            DesignSpec::Rejective { p, n } => rejective_draw(p, *n, rng, max_rejections),
            DesignSpec::Stratified { strata, n_k } => stratified_draw(strata, n_k, rng),
            DesignSpec::RaoSampford { p } => rao_sampford_draw(p, rng, max_rejections),
        }
    }
}

/// Independent Bernoulli(`p[i]`) inclusion; the sample size is random.
pub fn poisson_draw<T: Real, R: Rng>(p: &[T], rng: &mut R) -> Result<SampleIndicator, DesignError> {
    check_open_unit_interval(p)?;
    let bits = p
        .iter()
        .map(|&pi| real::<T>(rng.gen::<f64>()) < pi)
        .collect();
    Ok(SampleIndicator::from_bits(bits))
}

/// Uniform draw over the size-`n` subsets of `0..n_pop`.
pub fn srswor_draw<R: Rng>(
    n_pop: usize,
    n: usize,
    rng: &mut R,
) -> Result<SampleIndicator, DesignError> {
    if n == 0 || n > n_pop {
        return Err(DesignError::InvalidSize { n, n_pop });
    }
    let chosen = rand::seq::index::sample(rng, n_pop, n);
    Ok(SampleIndicator::from_included(
        n_pop,
        &chosen.into_iter().collect::<Vec<_>>(),
    ))
}

/// Rejective (conditional Poisson) draw: repeat Poisson(`p`) until the
/// sample size equals `n`.
pub fn rejective_draw<T: Real, R: Rng>(
    p: &[T],
    n: usize,
    rng: &mut R,
    max_rejections: usize,
) -> Result<SampleIndicator, DesignError> {
    DesignSpec::Rejective { p: p.to_vec(), n }.validate()?;
    let mut attempts = 0usize;
    loop {
        attempts += 1;
        let s = poisson_draw(p, rng)?;
        if s.size() == n {
            return Ok(s);
        }
        if attempts > max_rejections {
            return Err(DesignError::RejectionBudget {
                budget: max_rejections,
                rate: 1.0 / attempts as f64,
            });
        }
    }
}

/// Independent SRSWOR of size `n_k[k]` within each stratum; the sample is
/// the union of the per-stratum draws.
pub fn stratified_draw<R: Rng>(
    strata: &[Vec<usize>],
    n_k: &[usize],
    rng: &mut R,
) -> Result<SampleIndicator, DesignError> {
    let spec: DesignSpec<f64> = DesignSpec::Stratified {
        strata: strata.to_vec(),
        n_k: n_k.to_vec(),
    };
    spec.validate()?;
    let n_pop = spec.n_pop();
    let mut included = Vec::new();
    for (stratum, &nk) in strata.iter().zip(n_k) {
        let local = rand::seq::index::sample(rng, stratum.len(), nk);
        included.extend(local.into_iter().map(|j| stratum[j]));
    }
    Ok(SampleIndicator::from_included(n_pop, &included))
}

/// Rao-Sampford draw with target inclusion probabilities `pi_rs`
/// (`sum(pi_rs) == n`):
///
/// 1. select a first unit `i` with probability `pi_rs[i] / n`,
/// 2. draw the remaining `n - 1` units with replacement, with
///    probabilities proportional to `pi_rs[j] / (1 - pi_rs[j])`,
/// 3. accept if all `n` units are distinct, otherwise start over.
pub fn rao_sampford_draw<T: Real, R: Rng>(
    pi_rs: &[T],
    rng: &mut R,
    max_rejections: usize,
) -> Result<SampleIndicator, DesignError> {
    let spec = DesignSpec::RaoSampford { p: pi_rs.to_vec() };
    spec.validate()?;
    let n = spec.fixed_size().unwrap();
    let n_pop = pi_rs.len();

    // Cumulative tables for the two categorical draws, in f64.
    let pi64: Vec<f64> = pi_rs.iter().map(|&x| x.to_f64().unwrap()).collect();
    let first = cumulative(&pi64);
    let odds: Vec<f64> = pi64.iter().map(|&x| x / (1.0 - x)).collect();
    let rest = cumulative(&odds);

    let mut attempts = 0usize;
    let mut units = Vec::with_capacity(n);
    loop {
        attempts += 1;
        units.clear();
        units.push(draw_categorical(&first, rng));
        for _ in 1..n {
            units.push(draw_categorical(&rest, rng));
        }
        units.sort_unstable();
        if units.windows(2).all(|w| w[0] != w[1]) {
            return Ok(SampleIndicator::from_included(n_pop, &units));
        }
        if attempts > max_rejections {
            return Err(DesignError::RejectionBudget {
                budget: max_rejections,
                rate: 1.0 / attempts as f64,
            });
        }
    }
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        acc += w;
        out.push(acc);
    }
    out
}

fn draw_categorical<R: Rng>(cum: &[f64], rng: &mut R) -> usize {
    let total = *cum.last().expect("nonempty weight table");
    let u = rng.gen::<f64>() * total;
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Exact probability mass of a design over all `2^N` subsets, indexed by
/// bitmask. The oracle representation behind the validation suites.
#[derive(Clone, Debug)]
pub struct EnumeratedDesign<T> {
    n_pop: usize,
    masses: Vec<T>,
}

impl<T: Real> EnumeratedDesign<T> {
    /// Wraps a dense mass table, checking nonnegativity and that the
    /// masses sum to one. The tolerance is `1e-12` at `f64` and scales
    /// with the scalar's epsilon for wider types.
    pub fn from_masses(n_pop: usize, masses: Vec<T>) -> Result<Self, DesignError> {
        if n_pop > MAX_ENUM_POP {
            return Err(DesignError::EnumerationTooLarge { n_pop });
        }
        assert_eq!(masses.len(), 1usize << n_pop);
        for (mask, &m) in masses.iter().enumerate() {
            if m < T::zero() {
                return Err(DesignError::NegativeMass {
                    mask: mask as u32,
                    mass: m.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let sum = kahan_sum(masses.iter().copied());
        let tol = real::<T>(1e-12).max(T::epsilon() * real::<T>(64.0));
        if (sum - T::one()).abs() > tol {
            return Err(DesignError::MassNotNormalized {
                sum: sum.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { n_pop, masses })
    }

    pub fn n_pop(&self) -> usize {
        self.n_pop
    }

    pub fn mass(&self, mask: u32) -> T {
        self.masses[mask as usize]
    }

    /// Iterates over the subsets with nonzero mass.
    pub fn support(&self) -> impl Iterator<Item = (u32, T)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > T::zero())
            .map(|(mask, &m)| (mask as u32, m))
    }

    /// First-order inclusion probabilities `pi_i = sum over s containing i`.
    pub fn first_order(&self) -> Vec<T> {
        (0..self.n_pop)
            .map(|i| {
                kahan_sum(
                    self.support()
                        .filter(|(mask, _)| mask >> i & 1 == 1)
                        .map(|(_, m)| m),
                )
            })
            .collect()
    }

    /// Exact expectation of a statistic of the sample indicator.
    pub fn expectation<F: FnMut(&SampleIndicator) -> T>(&self, mut stat: F) -> T {
        kahan_sum(self.support().map(|(mask, m)| {
            let s = SampleIndicator::from_bitmask(self.n_pop, mask);
            m * stat(&s)
        }))
    }

    /// Exact upper-tail probability `P{stat >= t}`.
    pub fn tail_probability<F: FnMut(&SampleIndicator) -> T>(&self, mut stat: F, t: T) -> T {
        kahan_sum(self.support().filter_map(|(mask, m)| {
            let s = SampleIndicator::from_bitmask(self.n_pop, mask);
            (stat(&s) >= t).then_some(m)
        }))
    }
}

/// Expands a design spec into its exact mass over all subsets (`N <= 20`).
///
/// Fixed-size designs put zero mass off the size-`n` shell.
pub fn enumerate_design<T: Real>(spec: &DesignSpec<T>) -> Result<EnumeratedDesign<T>, DesignError> {
    spec.validate()?;
    let n_pop = spec.n_pop();
    if n_pop > MAX_ENUM_POP {
        return Err(DesignError::EnumerationTooLarge { n_pop });
    }
    let total = 1usize << n_pop;
    let mut masses = vec![T::zero(); total];

    match spec {
        DesignSpec::Poisson { p } => {
            for (mask, m) in masses.iter_mut().enumerate() {
                *m = poisson_mass(p, mask as u32);
            }
        }
        DesignSpec::Srswor { n_pop, n } => {
            let c = binomial(*n_pop, *n);
            let uniform = T::one() / real::<T>(c);
            for (mask, m) in masses.iter_mut().enumerate() {
                if mask.count_ones() as usize == *n {
                    *m = uniform;
                }
            }
        }
        DesignSpec::Rejective { p, n } => {
            for (mask, m) in masses.iter_mut().enumerate() {
                if mask.count_ones() as usize == *n {
                    *m = poisson_mass(p, mask as u32);
                }
            }
            normalize(&mut masses);
        }
        DesignSpec::Stratified { strata, n_k } => {
            let c: f64 = strata
                .iter()
                .zip(n_k)
                .map(|(s, &nk)| binomial(s.len(), nk))
                .product();
            let uniform = T::one() / real::<T>(c);
            let stratum_masks: Vec<u32> = strata
                .iter()
                .map(|s| s.iter().fold(0u32, |m, &i| m | 1 << i))
                .collect();
            for (mask, m) in masses.iter_mut().enumerate() {
                let ok = stratum_masks
                    .iter()
                    .zip(n_k)
                    .all(|(&sm, &nk)| (mask as u32 & sm).count_ones() as usize == nk);
                if ok {
                    *m = uniform;
                }
            }
        }
        DesignSpec::RaoSampford { p } => {
            // Mass induced by the three-step draw procedure:
            //   R(s) ∝ sum_{i in s} pi_i * prod_{j in s, j != i} pi_j/(1-pi_j)
            //        = (sum_{i in s} (1 - pi_i)) * prod_{j in s} pi_j/(1-pi_j).
            // This is the size-n design whose first-order inclusion
            // probabilities equal pi exactly.
            let n = spec.fixed_size().unwrap();
            let odds: Vec<T> = p.iter().map(|&x| x / (T::one() - x)).collect();
            for (mask, m) in masses.iter_mut().enumerate() {
                if mask.count_ones() as usize != n {
                    continue;
                }
                let mut prod = T::one();
                let mut slack = T::zero();
                for i in 0..p.len() {
                    if mask >> i & 1 == 1 {
                        prod = prod * odds[i];
                        slack = slack + (T::one() - p[i]);
                    }
                }
                *m = prod * slack;
            }
            normalize(&mut masses);
        }
    }

    EnumeratedDesign::from_masses(n_pop, masses)
}

fn poisson_mass<T: Real>(p: &[T], mask: u32) -> T {
    let mut m = T::one();
    for (i, &pi) in p.iter().enumerate() {
        m = m * if mask >> i & 1 == 1 { pi } else { T::one() - pi };
    }
    m
}

fn normalize<T: Real>(masses: &mut [T]) {
    let z = kahan_sum(masses.iter().copied());
    for m in masses.iter_mut() {
        *m = *m / z;
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for j in 0..k {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c
}

/// Second-order inclusion probabilities `pi_{i,j}` of an enumerated
/// design, with `pi_{i,i} = pi_i` on the diagonal.
pub fn second_order_probs<T: Real>(design: &EnumeratedDesign<T>) -> Vec<Vec<T>> {
    let n = design.n_pop();
    let mut acc = vec![vec![T::zero(); n]; n];
    for (mask, m) in design.support() {
        for i in 0..n {
            if mask >> i & 1 == 0 {
                continue;
            }
            for j in i..n {
                if mask >> j & 1 == 1 {
                    acc[i][j] = acc[i][j] + m;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            acc[i][j] = acc[j][i];
        }
    }
    acc
}
