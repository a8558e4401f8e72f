//! Regular parametric families: densities, scores and samplers.
//!
//! A [`Family`] bundles a log-density, its parameter gradient (the score)
//! and a sampler over a common scalar support. Parameters live in an open
//! domain of dimension one or two; domain checks are strict and never
//! clamp. Observations are `f64` values: real numbers on continuous
//! supports, nonnegative integers (stored exactly in `f64`) on the
//! counting support.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson as PoissonDistr};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// A point in a family's parameter space (dimension 1 or 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    coords: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() > 2 {
            return Err(Error::invalid(
                "parameter point",
                format!("dimension must be 1 or 2, got {}", coords.len()),
            ));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "parameter point",
                format!("non-finite coordinate {bad}"),
            ));
        }
        Ok(ParameterPoint { coords })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Largest coordinate-wise distance to `other`.
    pub fn max_distance(&self, other: &ParameterPoint) -> f64 {
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The dominating measure and support of a family's observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// Lebesgue measure on an interval; infinite endpoints allowed.
    Continuous { lower: f64, upper: f64 },
    /// Counting measure on the nonnegative integers.
    Counting,
}

impl Support {
    pub fn continuous(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::invalid(
                "support",
                format!("lower bound {lower} not below upper bound {upper}"),
            ));
        }
        Ok(Support::Continuous { lower, upper })
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Continuous { lower, upper } => x.is_finite() && x >= lower && x <= upper,
            Support::Counting => x.is_finite() && x >= 0.0 && x.fract() == 0.0,
        }
    }
}

/// A regular parametric family over a scalar observation space.
///
/// `log_density` and `score` must agree: the score is the gradient of the
/// log-density in the parameter. Implementations reject (never clamp)
/// parameters outside the open domain and observations outside the
/// support.
pub trait Family: Send + Sync {
    /// Identifier used in configuration files.
    fn name(&self) -> &str;

    fn param_dim(&self) -> usize;

    fn support(&self) -> Support;

    /// True iff `theta` has the right dimension and lies in the open domain.
    fn param_in_domain(&self, theta: &ParameterPoint) -> bool;

    /// Natural log of the density of `x` under `theta`.
    fn log_density(&self, x: f64, theta: &ParameterPoint) -> Result<f64>;

    /// Gradient of the log-density in `theta`; length equals `param_dim`.
    fn score(&self, x: f64, theta: &ParameterPoint) -> Result<Vec<f64>>;

    /// Draw `n` observations from `theta` using the caller's stream.
    fn sample_into(&self, theta: &ParameterPoint, n: usize, rng: &mut ChaCha8Rng)
        -> Result<Vec<f64>>;

    /// A rough (center, scale) of the distribution at `theta`, used to seed
    /// quadrature truncation and solver scan intervals.
    fn location_hint(&self, theta: &ParameterPoint) -> (f64, f64);

    /// Open interval of admissible values for parameter coordinate `coord`.
    fn param_domain(&self, coord: usize) -> (f64, f64) {
        let _ = coord;
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn density(&self, x: f64, theta: &ParameterPoint) -> Result<f64> {
        Ok(self.log_density(x, theta)?.exp())
    }

    fn check_theta(&self, theta: &ParameterPoint) -> Result<()> {
        if self.param_in_domain(theta) {
            Ok(())
        } else {
            Err(Error::ParameterDomain {
                family: self.name().to_string(),
                detail: format!("theta = {:?}", theta.coords()),
            })
        }
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if self.support().contains(x) {
            Ok(())
        } else {
            Err(Error::ObservationSupport {
                family: self.name().to_string(),
                x,
            })
        }
    }
}

/// Draw `n` observations deterministically from a master seed.
pub fn sample_with_seed(
    family: &dyn Family,
    theta: &ParameterPoint,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = rng::stream(seed, Purpose::Sample, &[]);
    family.sample_into(theta, n, &mut rng)
}

/// Gaussian with known variance; theta = (mean,).
#[derive(Debug, Clone)]
pub struct GaussianFixedVar {
    variance: f64,
}

impl GaussianFixedVar {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::invalid(
                "family",
                format!("gaussian_fixed_var requires variance > 0, got {variance}"),
            ));
        }
        Ok(GaussianFixedVar { variance })
    }

    /// Standard choice sigma^2 = 1.
    pub fn unit() -> Self {
        GaussianFixedVar { variance: 1.0 }
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl Family for GaussianFixedVar {
    fn name(&self) -> &str {
        "gaussian_fixed_var"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn support(&self) -> Support {
        Support::Continuous {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    fn param_in_domain(&self, theta: &ParameterPoint) -> bool {
        theta.dim() == 1
    }

    fn log_density(&self, x: f64, theta: &ParameterPoint) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        let mu = theta.coords()[0];
        let z = x - mu;
        Ok(-0.5 * (LN_2PI + self.variance.ln()) - z * z / (2.0 * self.variance))
    }

    fn score(&self, x: f64, theta: &ParameterPoint) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        Ok(vec![(x - theta.coords()[0]) / self.variance])
    }

    fn sample_into(
        &self,
        theta: &ParameterPoint,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let normal = Normal::new(theta.coords()[0], self.variance.sqrt())
            .expect("validated parameters");
        Ok((0..n).map(|_| normal.sample(rng)).collect())
    }

    fn location_hint(&self, theta: &ParameterPoint) -> (f64, f64) {
        (theta.coords()[0], self.variance.sqrt())
    }
}

/// Gaussian with unknown mean and variance; theta = (mean, variance).
///
/// The variance coordinate is the nuisance/scale parameter of the
/// two-dimensional case.
#[derive(Debug, Clone, Default)]
pub struct GaussianMeanVar;

impl Family for GaussianMeanVar {
    fn name(&self) -> &str {
        "gaussian_mean_var"
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn support(&self) -> Support {
        Support::Continuous {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    fn param_in_domain(&self, theta: &ParameterPoint) -> bool {
        theta.dim() == 2 && theta.coords()[1] > 0.0
    }

    fn log_density(&self, x: f64, theta: &ParameterPoint) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        let (mu, var) = (theta.coords()[0], theta.coords()[1]);
        let z = x - mu;
        Ok(-0.5 * (LN_2PI + var.ln()) - z * z / (2.0 * var))
    }

    fn score(&self, x: f64, theta: &ParameterPoint) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        let (mu, var) = (theta.coords()[0], theta.coords()[1]);
        let z = x - mu;
        Ok(vec![z / var, -0.5 / var + z * z / (2.0 * var * var)])
    }

    fn sample_into(
        &self,
        theta: &ParameterPoint,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let normal = Normal::new(theta.coords()[0], theta.coords()[1].sqrt())
            .expect("validated parameters");
        Ok((0..n).map(|_| normal.sample(rng)).collect())
    }

    fn location_hint(&self, theta: &ParameterPoint) -> (f64, f64) {
        (theta.coords()[0], theta.coords()[1].sqrt())
    }

    fn param_domain(&self, coord: usize) -> (f64, f64) {
        if coord == 1 {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    }
}

/// Poisson on the nonnegative integers; theta = (rate,).
#[derive(Debug, Clone, Default)]
pub struct Poisson;

impl Family for Poisson {
    fn name(&self) -> &str {
        "poisson"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn support(&self) -> Support {
        Support::Counting
    }

    fn param_in_domain(&self, theta: &ParameterPoint) -> bool {
        theta.dim() == 1 && theta.coords()[0] > 0.0
    }

    fn log_density(&self, x: f64, theta: &ParameterPoint) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        let rate = theta.coords()[0];
        Ok(-rate + x * rate.ln() - ln_gamma(x + 1.0))
    }

    fn score(&self, x: f64, theta: &ParameterPoint) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        Ok(vec![x / theta.coords()[0] - 1.0])
    }

    fn sample_into(
        &self,
        theta: &ParameterPoint,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let pois = PoissonDistr::new(theta.coords()[0]).expect("validated parameters");
        Ok((0..n).map(|_| pois.sample(rng)).collect())
    }

    fn location_hint(&self, theta: &ParameterPoint) -> (f64, f64) {
        let rate = theta.coords()[0];
        (rate, rate.sqrt().max(1.0))
    }

    fn param_domain(&self, _coord: usize) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

/// Exponential on [0, inf); theta = (rate,).
#[derive(Debug, Clone, Default)]
pub struct Exponential;

impl Family for Exponential {
    fn name(&self) -> &str {
        "exponential"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn support(&self) -> Support {
        Support::Continuous {
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    fn param_in_domain(&self, theta: &ParameterPoint) -> bool {
        theta.dim() == 1 && theta.coords()[0] > 0.0
    }

    fn log_density(&self, x: f64, theta: &ParameterPoint) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        let rate = theta.coords()[0];
        Ok(rate.ln() - rate * x)
    }

    fn score(&self, x: f64, theta: &ParameterPoint) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        Ok(vec![1.0 / theta.coords()[0] - x])
    }

    fn sample_into(
        &self,
        theta: &ParameterPoint,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let exp = Exp::new(theta.coords()[0]).expect("validated parameters");
        Ok((0..n).map(|_| exp.sample(rng)).collect())
    }

    fn location_hint(&self, theta: &ParameterPoint) -> (f64, f64) {
        let rate = theta.coords()[0];
        (1.0 / rate, 1.0 / rate)
    }

    fn param_domain(&self, _coord: usize) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

/// Look up a built-in family by its config identifier.
///
/// `variance` feeds `gaussian_fixed_var` (defaults to 1 when `None`) and is
/// rejected for families that take no option.
pub fn builtin(id: &str, variance: Option<f64>) -> Result<std::sync::Arc<dyn Family>> {
    use std::sync::Arc;
    match id {
        "gaussian_fixed_var" => Ok(Arc::new(GaussianFixedVar::new(variance.unwrap_or(1.0))?)),
        "gaussian_mean_var" | "poisson" | "exponential" => {
            if variance.is_some() {
                return Err(Error::config(
                    "model.variance",
                    format!("family `{id}` does not take a variance option"),
                ));
            }
            Ok(match id {
                "gaussian_mean_var" => Arc::new(GaussianMeanVar),
                "poisson" => Arc::new(Poisson),
                _ => Arc::new(Exponential),
            })
        }
        other => Err(Error::config(
            "model.family",
            format!(
                "unknown family `{other}`; expected one of gaussian_fixed_var, \
                 gaussian_mean_var, poisson, exponential"
            ),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p1(v: f64) -> ParameterPoint {
        ParameterPoint::scalar(v).unwrap()
    }

    #[test]
    fn gaussian_log_density_at_mode() {
        let fam = GaussianFixedVar::unit();
        let v = fam.log_density(0.0, &p1(0.0)).unwrap();
        assert_abs_diff_eq!(v, -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn poisson_log_density_at_zero() {
        let fam = Poisson;
        let v = fam.log_density(0.0, &p1(1.0)).unwrap();
        assert_abs_diff_eq!(v, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_log_density_at_zero() {
        let fam = Exponential;
        let v = fam.log_density(0.0, &p1(2.0)).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_score_values() {
        let fam = GaussianFixedVar::unit();
        assert_abs_diff_eq!(fam.score(1.0, &p1(1.0)).unwrap()[0], 0.0);
        assert_abs_diff_eq!(fam.score(2.0, &p1(0.0)).unwrap()[0], 2.0);
    }

    #[test]
    fn rejects_theta_outside_domain() {
        let err = Poisson.log_density(1.0, &p1(-0.5)).unwrap_err();
        assert!(matches!(err, Error::ParameterDomain { .. }));
        let err = GaussianMeanVar
            .log_density(0.0, &ParameterPoint::new(vec![0.0, -1.0]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::ParameterDomain { .. }));
    }

    #[test]
    fn rejects_x_outside_support() {
        let err = Poisson.log_density(1.5, &p1(2.0)).unwrap_err();
        assert!(matches!(err, Error::ObservationSupport { .. }));
        let err = Exponential.score(-0.1, &p1(1.0)).unwrap_err();
        assert!(matches!(err, Error::ObservationSupport { .. }));
    }

    #[test]
    fn parameter_point_rejects_non_finite() {
        assert!(ParameterPoint::new(vec![f64::NAN]).is_err());
        assert!(ParameterPoint::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ParameterPoint::new(vec![]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let fam = GaussianFixedVar::unit();
        let a = sample_with_seed(&fam, &p1(0.0), 1, 777).unwrap();
        let b = sample_with_seed(&fam, &p1(0.0), 1, 777).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn builtin_lookup() {
        assert!(builtin("poisson", None).is_ok());
        assert!(builtin("gaussian_fixed_var", Some(2.0)).is_ok());
        assert!(builtin("poisson", Some(1.0)).is_err());
        assert!(builtin("weibull", None).is_err());
    }
}
