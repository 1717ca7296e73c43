//! Statistical learning from survey samples.
//!
//! The crate implements unequal-probability sampling designs (Poisson,
//! simple random sampling without replacement, rejective / conditional
//! Poisson, stratified, Rao-Sampford), conversions between canonical
//! Poisson parameters and first-order inclusion probabilities,
//! Horvitz-Thompson weighted risk estimation, HT-weighted learners
//! (linear SVM on expanded features, CART-style trees) and the
//! concentration / excess-risk bound calculators that go with them.
//!
//! Every design can, for populations of at most 20 units, be expanded
//! into an exact probability mass over all subsets
//! ([`designs::EnumeratedDesign`]). These enumerations are the oracles
//! behind the crate's validation suites: unbiasedness of the HT risk,
//! negative association of rejective indicators, inverse-weight gap and
//! Bernstein-tail validity are all checked against exact expectations
//! rather than Monte-Carlo noise.
//!
//! Numeric kernels are generic over the scalar type through the [`Real`]
//! trait (any `num_traits::Float`, in practice `f32` or `f64`). The
//! `*64` aliases below fix `f64`, which is what the CLI and the
//! experiment harness use.

pub mod bounds;
pub mod designs;
pub mod estimators;
pub mod experiment;
pub mod inclusion;
pub mod io;
pub mod learners;
pub mod validate;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type for the numeric kernels: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
}

/// Shorthand for converting an `f64` constant into the working scalar.
pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

pub(crate) fn real_usize<T: Real>(x: usize) -> T {
    T::from_usize(x).expect("usize representable in scalar type")
}

/// Compensated (Neumaier) summation; keeps enumeration sums exact to a
/// few ulps independently of the number of terms.
pub(crate) fn kahan_sum<T: Real, I: IntoIterator<Item = T>>(iter: I) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in iter {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp = comp + ((sum - t) + x);
        } else {
            comp = comp + ((x - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

pub use bounds::{BernsteinInputs, BoundInputs, BoundReport};
pub use designs::{DesignSpec, EnumeratedDesign, SampleIndicator};
pub use estimators::{Classifier, Population, RiskKind, RiskValue};
pub use inclusion::{InclusionProbs, PoissonDiagnostics};
pub use learners::{LinearModel, TreeModel};

/// `f64` aliases, the concrete instantiation used by the CLI.
pub type DesignSpec64 = designs::DesignSpec<f64>;
pub type EnumeratedDesign64 = designs::EnumeratedDesign<f64>;
pub type InclusionProbs64 = inclusion::InclusionProbs<f64>;
pub type PoissonDiagnostics64 = inclusion::PoissonDiagnostics<f64>;
pub type Population64 = estimators::Population<f64>;
pub type RiskValue64 = estimators::RiskValue<f64>;
pub type LinearModel64 = learners::LinearModel<f64>;
pub type TreeModel64 = learners::TreeModel<f64>;
pub type BoundInputs64 = bounds::BoundInputs<f64>;
pub type BoundReport64 = bounds::BoundReport<f64>;
