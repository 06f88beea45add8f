//! Closed-form stand-ins for a trained basis.
//!
//! Probes let the assembly, metrics and differentiation code be checked
//! against functions whose derivatives and integrals are known exactly
//! (constants, monomials, manufactured solutions).

use std::fmt;
use std::sync::Arc;

use crate::feature_basis::FeatureMap;

type Feature = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct FnProbe {
    input_dim: usize,
    features: Vec<Feature>,
}

impl fmt::Debug for FnProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnProbe")
            .field("input_dim", &self.input_dim)
            .field("features", &self.features.len())
            .finish()
    }
}

impl FnProbe {
    pub fn new(input_dim: usize, features: Vec<Feature>) -> Self {
        FnProbe { input_dim, features }
    }

    pub fn single(input_dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(input_dim, vec![Arc::new(f)])
    }

    pub fn constant(input_dim: usize, value: f64) -> Self {
        Self::single(input_dim, move |_| value)
    }

    /// `Π_k x_k^{exponents[k]}`.
    pub fn monomial(input_dim: usize, exponents: &[i32]) -> Self {
        let exps = exponents.to_vec();
        Self::single(input_dim, move |x| {
            x.iter().zip(&exps).map(|(v, &e)| v.powi(e)).product()
        })
    }

    pub fn push(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.features.push(Arc::new(f));
        self
    }
}

impl FeatureMap for FnProbe {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn len(&self) -> usize {
        self.features.len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = f(x);
        }
    }
}
