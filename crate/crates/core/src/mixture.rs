//! Finite mixed models: a basic family, a component set and a mixing matrix.
//!
//! Row `i` of the mixing matrix gives the membership probabilities of the
//! `i`th observation across the `K` components, so the observation's
//! density is the row-weighted sum of component densities. A model
//! "contains a mixture" when some entry is strictly between 0 and 1 beyond
//! a numeric tolerance.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::family::{Family, ParameterPoint};
use crate::rng::{self, Purpose};

/// Default tolerance deciding when an entry counts as exactly 0 or 1.
pub const DEGENERACY_TOL: f64 = 1e-9;

const ROW_SUM_TOL: f64 = 1e-12;
const DISTINCT_TOL: f64 = 1e-9;

/// Row-stochastic membership-probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    rows: Vec<Vec<f64>>,
}

impl MixingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("mixing matrix", "must have at least one row"));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(Error::invalid("mixing matrix", "must have at least one column"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(
                    "mixing matrix",
                    format!("row {i} has {} entries, expected {k}", row.len()),
                ));
            }
            if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::invalid(
                    "mixing matrix",
                    format!("row {i} entry {bad} outside [0, 1]"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(
                    "mixing matrix",
                    format!("row {i} sums to {sum}, not 1"),
                ));
            }
        }
        Ok(MixingMatrix { rows })
    }

    /// K x K matrix with one component fully known per row.
    pub fn identity(k: usize) -> Self {
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        MixingMatrix { rows }
    }

    /// Single row with equal membership probability for every component.
    pub fn uniform_row(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("mixing matrix", "must have at least one column"));
        }
        MixingMatrix::new(vec![vec![1.0 / k as f64; k]])
    }

    /// Single row placing `1 - fraction` on component 0 and spreading
    /// `fraction` uniformly over the remaining components.
    pub fn partial_row(k: usize, fraction: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(
                "mixing matrix",
                "partial pattern needs at least two components",
            ));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(
                "mixing matrix",
                format!("partial fraction {fraction} outside [0, 1]"),
            ));
        }
        let mut row = vec![fraction / (k - 1) as f64; k];
        row[0] = 1.0 - fraction;
        MixingMatrix::new(vec![row])
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_components(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.rows[i][k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// True iff some entry lies strictly inside (tol, 1 - tol).
    pub fn contains_mixture(&self, tol: f64) -> bool {
        self.rows
            .iter()
            .flatten()
            .any(|&p| p > tol && p < 1.0 - tol)
    }

    /// True iff row `i` is (within tol) a vertex of the simplex.
    pub fn row_is_degenerate(&self, i: usize, tol: f64) -> bool {
        self.rows[i].iter().all(|&p| p <= tol || p >= 1.0 - tol)
    }
}

/// The ordered set of distinct component parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    points: Vec<ParameterPoint>,
}

impl ComponentSet {
    pub fn new(points: Vec<ParameterPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("component set", "must contain at least one point"));
        }
        let dim = points[0].dim();
        for (k, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::invalid(
                    "component set",
                    format!("component {k} has dimension {}, expected {dim}", p.dim()),
                ));
            }
        }
        for a in 0..points.len() {
            for b in (a + 1)..points.len() {
                if points[a].max_distance(&points[b]) <= DISTINCT_TOL {
                    return Err(Error::invalid(
                        "component set",
                        format!("components {a} and {b} are not distinct"),
                    ));
                }
            }
        }
        Ok(ComponentSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &ParameterPoint {
        &self.points[k]
    }

    pub fn points(&self) -> &[ParameterPoint] {
        &self.points
    }
}

/// How a mixed-model sample assigns observations to components.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleRegime {
    /// Every observation's component is fixed up front; the vector length
    /// is the sample size. Observation `j` is matched against mixing row
    /// `j mod I` and its assignment must have positive probability there.
    FixedMembership(Vec<usize>),
    /// Membership of observation `j` is drawn from mixing row `j mod I`.
    RandomMembership { n: usize },
}

/// Observations plus the memberships that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub observations: Vec<f64>,
    pub memberships: Vec<usize>,
}

/// A finite mixed model over a basic family.
#[derive(Clone)]
pub struct MixedModel {
    family: Arc<dyn Family>,
    components: ComponentSet,
    mixing: MixingMatrix,
}

impl std::fmt::Debug for MixedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MixedModel")
            .field("family", &self.family.name())
            .field("components", &self.components)
            .field("mixing", &self.mixing)
            .finish()
    }
}

impl MixedModel {
    pub fn new(
        family: Arc<dyn Family>,
        components: ComponentSet,
        mixing: MixingMatrix,
    ) -> Result<Self> {
        if mixing.n_components() != components.len() {
            return Err(Error::invalid(
                "mixed model",
                format!(
                    "mixing matrix has {} columns but there are {} components",
                    mixing.n_components(),
                    components.len()
                ),
            ));
        }
        for (k, p) in components.points().iter().enumerate() {
            family.check_theta(p).map_err(|e| {
                Error::invalid("mixed model", format!("component {k}: {e}"))
            })?;
        }
        Ok(MixedModel { family, components, mixing })
    }

    pub fn family(&self) -> &dyn Family {
        self.family.as_ref()
    }

    pub fn family_arc(&self) -> Arc<dyn Family> {
        Arc::clone(&self.family)
    }

    pub fn components(&self) -> &ComponentSet {
        &self.components
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn n_rows(&self) -> usize {
        self.mixing.n_rows()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn contains_mixture(&self, tol: f64) -> bool {
        self.mixing.contains_mixture(tol)
    }

    /// A copy of the model with component `k` moved to `theta`.
    pub fn with_component(&self, k: usize, theta: ParameterPoint) -> Result<Self> {
        self.check_component(k)?;
        let mut points = self.components.points().to_vec();
        points[k] = theta;
        MixedModel::new(
            Arc::clone(&self.family),
            ComponentSet::new(points)?,
            self.mixing.clone(),
        )
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.mixing.n_rows() {
            return Err(Error::invalid(
                "row index",
                format!("i = {i} but the mixing matrix has {} rows", self.mixing.n_rows()),
            ));
        }
        Ok(())
    }

    fn check_component(&self, k: usize) -> Result<()> {
        if k >= self.components.len() {
            return Err(Error::invalid(
                "component index",
                format!("k = {k} but there are {} components", self.components.len()),
            ));
        }
        Ok(())
    }

    /// Per-component log of pi_ik * p(x; theta_k); -inf where pi_ik = 0.
    fn weighted_log_terms(&self, i: usize, x: f64) -> Result<Vec<f64>> {
        let row = self.mixing.row(i);
        let mut terms = Vec::with_capacity(row.len());
        for (k, &pi) in row.iter().enumerate() {
            if pi == 0.0 {
                terms.push(f64::NEG_INFINITY);
            } else {
                let ld = self.family.log_density(x, self.components.point(k))?;
                terms.push(pi.ln() + ld);
            }
        }
        Ok(terms)
    }

    /// log of the row-i mixture density; -inf where the density vanishes.
    pub fn log_mixture_density(&self, i: usize, x: f64) -> Result<f64> {
        self.check_row(i)?;
        let terms = self.weighted_log_terms(i, x)?;
        Ok(log_sum_exp(&terms))
    }

    /// The row-i mixture density sum_k pi_ik p(x; theta_k).
    pub fn mixture_density(&self, i: usize, x: f64) -> Result<f64> {
        Ok(self.log_mixture_density(i, x)?.exp())
    }

    /// Posterior membership probabilities of x under row i.
    ///
    /// Computed in log space, so component densities may underflow without
    /// harming the ratio. Fails as a singular evaluation when the mixture
    /// density itself vanishes at x.
    pub fn posterior_weights(&self, i: usize, x: f64) -> Result<Vec<f64>> {
        self.check_row(i)?;
        let terms = self.weighted_log_terms(i, x)?;
        let lse = log_sum_exp(&terms);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Singular(format!(
                "mixture density of row {i} vanishes at x = {x}"
            )));
        }
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }

    /// Gradient of log mixture density in the parameters of component `k`:
    /// posterior weight of k at x times the basic-family score at theta_k.
    ///
    /// With pi_ik = 1 the posterior weight is exactly one and this reduces
    /// to the basic score.
    pub fn mixture_score(&self, i: usize, x: f64, k: usize) -> Result<Vec<f64>> {
        self.check_component(k)?;
        let weights = self.posterior_weights(i, x)?;
        let score = self.family.score(x, self.components.point(k))?;
        Ok(score.iter().map(|s| weights[k] * s).collect())
    }

    /// (center, scale) hints of all components, for quadrature truncation.
    pub fn component_hints(&self) -> Vec<(f64, f64)> {
        self.components
            .points()
            .iter()
            .map(|p| self.family.location_hint(p))
            .collect()
    }

    /// Draw a sample under the regime; deterministic per seed.
    pub fn sample(&self, regime: &SampleRegime, seed: u64) -> Result<MixedSample> {
        let memberships = match regime {
            SampleRegime::FixedMembership(assign) => {
                for (j, &k) in assign.iter().enumerate() {
                    self.check_component(k)?;
                    let i = j % self.mixing.n_rows();
                    if self.mixing.entry(i, k) <= 0.0 {
                        return Err(Error::invalid(
                            "membership assignment",
                            format!(
                                "observation {j} assigned to component {k}, \
                                 but row {i} gives it probability 0"
                            ),
                        ));
                    }
                }
                assign.clone()
            }
            SampleRegime::RandomMembership { n } => {
                let mut rng = rng::stream(seed, Purpose::Membership, &[]);
                (0..*n)
                    .map(|j| {
                        let row = self.mixing.row(j % self.mixing.n_rows());
                        draw_categorical(row, &mut rng)
                    })
                    .collect()
            }
        };

        let mut rng = rng::stream(seed, Purpose::Sample, &[]);
        let mut observations = Vec::with_capacity(memberships.len());
        for &k in &memberships {
            let draw = self
                .family
                .sample_into(self.components.point(k), 1, &mut rng)?;
            observations.push(draw[0]);
        }
        Ok(MixedSample { observations, memberships })
    }
}

fn draw_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::GaussianFixedVar;
    use approx::assert_abs_diff_eq;

    fn gaussian_pair(mus: &[f64], rows: Vec<Vec<f64>>) -> MixedModel {
        let family = Arc::new(GaussianFixedVar::unit());
        let points = mus
            .iter()
            .map(|&m| ParameterPoint::scalar(m).unwrap())
            .collect();
        MixedModel::new(
            family,
            ComponentSet::new(points).unwrap(),
            MixingMatrix::new(rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn contains_mixture_cases() {
        let degenerate = MixingMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(!degenerate.contains_mixture(DEGENERACY_TOL));

        let complete = MixingMatrix::new(vec![vec![0.3, 0.7]]).unwrap();
        assert!(complete.contains_mixture(DEGENERACY_TOL));

        let partial = MixingMatrix::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(partial.contains_mixture(DEGENERACY_TOL));
    }

    #[test]
    fn mixing_matrix_validation() {
        assert!(MixingMatrix::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(MixingMatrix::new(vec![vec![-0.1, 1.1]]).is_err());
        assert!(MixingMatrix::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        assert!(MixingMatrix::new(vec![]).is_err());
    }

    #[test]
    fn component_set_rejects_duplicates() {
        let p = ParameterPoint::scalar(1.0).unwrap();
        let q = ParameterPoint::scalar(1.0 + 1e-12).unwrap();
        assert!(ComponentSet::new(vec![p, q]).is_err());
    }

    #[test]
    fn degenerate_row_recovers_basic_density() {
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![1.0, 0.0]]);
        let fam = GaussianFixedVar::unit();
        let expected = fam
            .density(0.7, &ParameterPoint::scalar(0.0).unwrap())
            .unwrap();
        assert_abs_diff_eq!(model.mixture_density(0, 0.7).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_density_equals_standard_normal_peak_shift() {
        // 0.5 phi(1) + 0.5 phi(-1) = phi(1)
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![0.5, 0.5]]);
        assert_abs_diff_eq!(
            model.mixture_density(0, 1.0).unwrap(),
            0.241_970_724_519_143_37,
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_row_score_reduces_exactly() {
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![1.0, 0.0]]);
        let s = model.mixture_score(0, 1.3, 0).unwrap();
        assert_eq!(s[0], 1.3);
    }

    #[test]
    fn midpoint_scores_are_antisymmetric() {
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![0.5, 0.5]]);
        let s1 = model.mixture_score(0, 1.0, 0).unwrap()[0];
        let s2 = model.mixture_score(0, 1.0, 1).unwrap()[0];
        assert_abs_diff_eq!(s1, -s2, epsilon = 1e-14);
    }

    #[test]
    fn fixed_membership_rejects_zero_probability_assignment() {
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![1.0, 0.0]]);
        let err = model
            .sample(&SampleRegime::FixedMembership(vec![1]), 3)
            .unwrap_err();
        assert!(matches!(err, Error::Invalid { .. }));
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![0.5, 0.5]]);
        let a = model.sample(&SampleRegime::RandomMembership { n: 50 }, 11).unwrap();
        let b = model.sample(&SampleRegime::RandomMembership { n: 50 }, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn posterior_weights_survive_extreme_tails() {
        let model = gaussian_pair(&[0.0, 2.0], vec![vec![0.5, 0.5]]);
        // Both component densities underflow to zero here, but the
        // posterior is still well defined in log space.
        let w = model.posterior_weights(0, -60.0).unwrap();
        assert!(w[0] > 0.999_999);
        assert_abs_diff_eq!(w[0] + w[1], 1.0, epsilon = 1e-12);
    }
}
