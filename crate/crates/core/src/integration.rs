//! Expectations over known covariate distributions, used by the theoretical
//! variance and probability-limit calculators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Absolute error target for one-dimensional quadrature of a density-scaled
/// integrand.
const QUADRATURE_TOLERANCE: f64 = 1e-10;

/// Number of draws for Monte Carlo expectations in two or more dimensions.
pub const MONTE_CARLO_DRAWS: usize = 1_000_000;

/// A covariate distribution that can compute `E[g(X)]`.
pub trait CovariateMeasure: Sync {
    fn dim(&self) -> usize;

    fn expect(&self, g: &dyn Fn(&[f64]) -> f64) -> f64;
}

/// Independent uniform covariates on a box.
///
/// One-dimensional expectations use double-exponential quadrature; higher
/// dimensions use seeded Monte Carlo with [`MONTE_CARLO_DRAWS`] draws.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformMeasure {
    lower: Vec<f64>,
    upper: Vec<f64>,
    seed: u64,
}

impl UniformMeasure {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bounds must have equal length");
        assert!(!lower.is_empty(), "at least one dimension");
        assert!(
            lower.iter().zip(&upper).all(|(a, b)| a < b),
            "lower bounds must be below upper bounds"
        );
        Self {
            lower,
            upper,
            seed: 0x5eed,
        }
    }

    /// Uniform on `[a, b]`.
    pub fn interval(a: f64, b: f64) -> Self {
        Self::new(vec![a], vec![b])
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

impl CovariateMeasure for UniformMeasure {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn expect(&self, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        if self.dim() == 1 {
            let (a, b) = (self.lower[0], self.upper[0]);
            let out = quadrature::integrate(|x| g(&[x]), a, b, QUADRATURE_TOLERANCE);
            return out.integral / (b - a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x = vec![0.0; self.dim()];
        let mut acc = 0.0;
        for _ in 0..MONTE_CARLO_DRAWS {
            for (k, v) in x.iter_mut().enumerate() {
                *v = rng.gen_range(self.lower[k]..self.upper[k]);
            }
            acc += g(&x);
        }
        acc / MONTE_CARLO_DRAWS as f64
    }
}
