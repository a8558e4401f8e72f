//! Numerical expectation engines.
//!
//! Three engines compute E[f(X)] where X has density `weight` with respect
//! to the support's dominating measure:
//!
//! * adaptive Gauss-Kronrod (G7, K15) quadrature on continuous supports,
//!   with infinite tails truncated where the weight density falls below a
//!   floor derived from [`QuadratureSpec::truncation_mass`];
//! * exact term-by-term summation on the counting support, stopped once the
//!   accumulated weight leaves less than `truncation_mass` in the tail;
//! * seeded Monte Carlo with a streaming mean/variance accumulator.
//!
//! Quadrature is fully deterministic; Monte Carlo is deterministic per seed
//! and independent of the batch size.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::family::Support;
use crate::rng::{self, Purpose};

/// Tolerances and budgets for deterministic expectations.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Upper bound on the probability mass allowed outside the truncated
    /// integration region (or beyond the last summed term).
    pub truncation_mass: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_subdivisions: 2000,
            truncation_mass: 1e-12,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::invalid("quadrature spec", "tolerances must be > 0"));
        }
        if self.truncation_mass <= 0.0 || self.truncation_mass > 1e-6 {
            return Err(Error::invalid(
                "quadrature spec",
                "truncation_mass must lie in (0, 1e-6]",
            ));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::invalid("quadrature spec", "max_subdivisions must be >= 1"));
        }
        Ok(())
    }
}

/// A deterministic estimate with its error bound.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error_estimate: f64,
}

/// Monte Carlo draw budget.
#[derive(Debug, Clone)]
pub struct MonteCarloSpec {
    pub n: usize,
    pub seed: u64,
    /// Draws are requested from the sampler in chunks of this size; the
    /// result does not depend on it.
    pub batch: usize,
}

impl MonteCarloSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        MonteCarloSpec { n, seed, batch: 8192 }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

// 15-point Kronrod nodes on [-1, 1] (positive half; rule is symmetric) and
// the matching Kronrod / 7-point Gauss weights, as published in QUADPACK.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7/K15 evaluation over [a, b]: (kronrod value, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut res_abs = WGK[7] * fc.abs();

    let mut fv = [0.0f64; 15];
    fv[7] = fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv[j] = f1;
        fv[14 - j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    if !kronrod.is_finite() {
        return Err(Error::NonFinite(format!(
            "integrand evaluated to a non-finite value on [{a}, {b}]"
        )));
    }

    let mean = kronrod * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }

    let value = kronrod * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();

    // QUADPACK's empirical rescaling of the raw Gauss/Kronrod difference.
    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * 1.0_f64.min((200.0 * err / res_asc).powf(1.5));
    }
    let floor = 50.0 * f64::EPSILON * res_abs;
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && floor > err {
        err = floor;
    }
    Ok((value, err))
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Adaptive G7/K15 over a finite interval, worst segment split first.
fn adaptive_gk15<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    initial_cuts: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut edges: Vec<f64> = Vec::with_capacity(initial_cuts.len() + 2);
    edges.push(a);
    edges.extend(initial_cuts.iter().copied().filter(|c| *c > a && *c < b));
    edges.push(b);
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup();
    for w in edges.windows(2) {
        let (value, error) = gk15(f, w[0], w[1])?;
        segments.push(Segment { a: w[0], b: w[1], value, error });
    }

    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let total_err: f64 = segments.iter().map(|s| s.error).sum();
        if total_err <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            break;
        }
        if segments.len() >= spec.max_subdivisions {
            return Err(Error::QuadratureNonConvergence {
                subdivisions: segments.len(),
                partial: total,
                error: total_err,
            });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.partial_cmp(&y.1.error).unwrap())
            .map(|(i, _)| i)
            .expect("at least one segment");
        let seg = segments[worst];
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval at floating-point resolution; error cannot shrink.
            return Err(Error::QuadratureNonConvergence {
                subdivisions: segments.len(),
                partial: total,
                error: total_err,
            });
        }
        let (lv, le) = gk15(f, seg.a, mid)?;
        let (rv, re) = gk15(f, mid, seg.b)?;
        segments[worst] = Segment { a: seg.a, b: mid, value: lv, error: le };
        segments.push(Segment { a: mid, b: seg.b, value: rv, error: re });
    }

    // Accumulate in position order so the result never depends on the
    // subdivision history.
    segments.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
    let value: f64 = segments.iter().map(|s| s.value).sum();
    let error_estimate: f64 = segments.iter().map(|s| s.error).sum();
    Ok(Estimate { value, error_estimate })
}

/// Locate a finite interval carrying all but `truncation_mass` of the weight.
///
/// Seeds are probed on a geometric ladder plus the caller's anchors; the
/// interval starts at the outermost seeds whose weight clears the floor and
/// is then expanded until `weight * max(1, |integrand|)` drops below it.
fn truncate_support<F, W>(
    integrand: &F,
    weight: &W,
    lower: f64,
    upper: f64,
    anchors: &[(f64, f64)],
    truncation_mass: f64,
) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
{
    let mut seeds: Vec<f64> = Vec::new();
    let mut push = |x: f64| {
        if x > lower && x < upper && x.is_finite() {
            seeds.push(x);
        }
    };
    push(0.0);
    let mut step = 0.5;
    for _ in 0..13 {
        push(step);
        push(-step);
        if lower.is_finite() {
            push(lower + step);
        }
        if upper.is_finite() {
            push(upper - step);
        }
        step *= 2.0;
    }
    for &(center, scale) in anchors {
        push(center);
        push(center - scale);
        push(center + scale);
    }
    if lower.is_finite() && upper.is_finite() {
        push(0.5 * (lower + upper));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("support", "no probe points inside the support"));
    }

    let peak = seeds.iter().map(|&s| weight(s)).fold(0.0f64, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Singular(
            "weight density not positive at any probe point".to_string(),
        ));
    }
    let floor = (truncation_mass * 1e-3 * peak).max(f64::MIN_POSITIVE * 1e20);
    let live = |x: f64| weight(x) * integrand(x).abs().max(1.0) > floor;

    // Outermost seeds that still carry weight; anchors are always kept so a
    // multimodal weight is never cut between its modes.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in &seeds {
        if weight(s) > floor {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    for &(center, scale) in anchors {
        lo = lo.min((center - scale).max(lower));
        hi = hi.max((center + scale).min(upper));
    }
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        let best = seeds
            .iter()
            .copied()
            .max_by(|x, y| weight(*x).partial_cmp(&weight(*y)).unwrap())
            .unwrap();
        lo = best;
        hi = best;
    }

    let scale0 = anchors
        .iter()
        .map(|&(_, s)| s.abs())
        .fold(0.0f64, f64::max)
        .max((hi - lo) / 8.0)
        .max(0.5);

    if lower.is_finite() {
        lo = lower;
    } else {
        let mut h = scale0;
        let mut guard = 0;
        while live(lo) && guard < 400 {
            lo -= h;
            h *= 1.25;
            guard += 1;
        }
    }
    if upper.is_finite() {
        hi = upper;
    } else {
        let mut h = scale0;
        let mut guard = 0;
        while live(hi) && guard < 400 {
            hi += h;
            h *= 1.25;
            guard += 1;
        }
    }
    Ok((lo, hi))
}

/// E[f(X)] by quadrature/summation, with anchor hints for the truncation.
///
/// Each anchor is a (center, scale) pair that must end up strictly inside
/// the integration region; pass one per mixture component.
pub fn expect_quadrature_anchored<F, W>(
    integrand: F,
    weight: W,
    support: Support,
    anchors: &[(f64, f64)],
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
{
    spec.validate()?;
    match support {
        Support::Continuous { lower, upper } => {
            let (a, b) =
                truncate_support(&integrand, &weight, lower, upper, anchors, spec.truncation_mass)?;
            let cuts: Vec<f64> = anchors.iter().map(|&(c, _)| c).collect();
            adaptive_gk15(&|x| integrand(x) * weight(x), a, b, &cuts, spec)
        }
        Support::Counting => counting_sum(&integrand, &weight, spec),
    }
}

/// E[f(X)] for X with density `weight` over `support` (Eq. engine entry).
pub fn expect_quadrature<F, W>(
    integrand: F,
    weight: W,
    support: Support,
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
{
    expect_quadrature_anchored(integrand, weight, support, &[], spec)
}

/// Term-by-term expectation over the nonnegative integers.
///
/// Stops once cumulative weight exceeds `1 - truncation_mass` and the last
/// few terms are negligible; runs monotonically further as the truncation
/// mass shrinks.
fn counting_sum<F, W>(integrand: &F, weight: &W, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
{
    const MAX_TERMS: usize = 2_000_000;
    const QUIET_RUN: usize = 5;

    let mut sum = 0.0f64;
    let mut abs_sum = 0.0f64;
    let mut cum_weight = 0.0f64;
    let mut quiet = 0usize;
    let mut recent_f_max = 0.0f64;

    for k in 0..MAX_TERMS {
        let x = k as f64;
        let w = weight(x);
        let fx = integrand(x);
        let term = fx * w;
        if !term.is_finite() || !w.is_finite() {
            return Err(Error::NonFinite(format!(
                "counting-sum term at x = {k} is not finite"
            )));
        }
        sum += term;
        abs_sum += term.abs();
        cum_weight += w;
        recent_f_max = recent_f_max.max(fx.abs());

        if cum_weight >= 1.0 - spec.truncation_mass {
            if term.abs() <= spec.truncation_mass * (1.0 + abs_sum) {
                quiet += 1;
            } else {
                quiet = 0;
            }
            if quiet >= QUIET_RUN {
                let tail = (1.0 - cum_weight).max(0.0) * recent_f_max.max(1.0);
                let rounding = abs_sum * f64::EPSILON * (k as f64).sqrt();
                return Ok(Estimate {
                    value: sum,
                    error_estimate: tail + rounding,
                });
            }
        }
    }
    Err(Error::SumNonConvergence {
        terms: MAX_TERMS,
        partial: sum,
    })
}

/// E[f(X)] by Monte Carlo over draws from `sampler`.
///
/// `sampler` receives the derived stream and a chunk size and must return
/// that many draws; it is called repeatedly on the same stream, so the
/// estimate is identical for any batch size.
pub fn expect_mc<F, S>(integrand: F, sampler: S, spec: &MonteCarloSpec) -> Result<McEstimate>
where
    F: Fn(f64) -> f64,
    S: Fn(&mut ChaCha8Rng, usize) -> Result<Vec<f64>>,
{
    if spec.n == 0 {
        return Err(Error::invalid("monte carlo spec", "n must be >= 1"));
    }
    let batch = spec.batch.max(1);
    let mut rng = rng::stream(spec.seed, Purpose::MonteCarlo, &[]);

    // Welford accumulator.
    let mut count = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;

    let mut remaining = spec.n;
    while remaining > 0 {
        let take = remaining.min(batch);
        let draws = sampler(&mut rng, take)?;
        if draws.len() != take {
            return Err(Error::invalid(
                "sampler",
                format!("requested {take} draws, got {}", draws.len()),
            ));
        }
        for x in draws {
            let fx = integrand(x);
            if !fx.is_finite() {
                return Err(Error::NonFinite(format!(
                    "integrand non-finite at draw index {count} (x = {x})"
                )));
            }
            count += 1;
            let delta = fx - mean;
            mean += delta / count as f64;
            m2 += delta * (fx - mean);
        }
        remaining -= take;
    }

    let std_error = if count > 1 {
        (m2 / (count as f64 - 1.0) / count as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { value: mean, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{Family, GaussianFixedVar, ParameterPoint};
    use approx::assert_abs_diff_eq;

    fn std_normal_density(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn real_line() -> Support {
        Support::Continuous {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    #[test]
    fn gaussian_first_moment_is_zero() {
        let e = expect_quadrature(|x| x, std_normal_density, real_line(), &QuadratureSpec::default())
            .unwrap();
        assert!(e.value.abs() < 1e-10, "value = {}", e.value);
    }

    #[test]
    fn gaussian_second_moment_is_one() {
        let e = expect_quadrature(
            |x| x * x,
            std_normal_density,
            real_line(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(e.value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn exponential_mean_is_half_at_rate_two() {
        let e = expect_quadrature(
            |x| x,
            |x| 2.0 * (-2.0 * x).exp(),
            Support::Continuous { lower: 0.0, upper: f64::INFINITY },
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(e.value, 0.5, epsilon = 1e-8);
    }

    #[test]
    fn counting_sum_monotone_in_truncation_mass() {
        // Poisson(4) weight, nonnegative integrand: a looser truncation can
        // only drop nonnegative terms.
        let weight = |x: f64| (-4.0f64 + x * 4.0f64.ln() - statrs::function::gamma::ln_gamma(x + 1.0)).exp();
        let loose = QuadratureSpec { truncation_mass: 1e-6, ..Default::default() };
        let tight = QuadratureSpec { truncation_mass: 1e-12, ..Default::default() };
        let v_loose = counting_sum(&|x| x, &weight, &loose).unwrap().value;
        let v_tight = counting_sum(&|x| x, &weight, &tight).unwrap().value;
        assert!(v_tight >= v_loose);
        assert_abs_diff_eq!(v_tight, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn quadrature_reports_non_convergence() {
        let spec = QuadratureSpec { max_subdivisions: 2, ..Default::default() };
        let err = expect_quadrature(
            |x: f64| (50.0 * x).sin(),
            std_normal_density,
            real_line(),
            &spec,
        )
        .unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
    }

    #[test]
    fn error_estimate_is_honest_on_known_integral() {
        let e = expect_quadrature(
            |x| x * x,
            std_normal_density,
            real_line(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!((e.value - 1.0).abs() <= e.error_estimate + 1e-12);
    }

    #[test]
    fn mc_constant_integrand_is_exact() {
        let fam = GaussianFixedVar::unit();
        let theta = ParameterPoint::scalar(0.0).unwrap();
        let est = expect_mc(
            |_| 1.0,
            |rng, n| fam.sample_into(&theta, n, rng),
            &MonteCarloSpec::new(1000, 5),
        )
        .unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_is_deterministic_and_batch_invariant() {
        let fam = GaussianFixedVar::unit();
        let theta = ParameterPoint::scalar(0.0).unwrap();
        let sampler = |rng: &mut ChaCha8Rng, n: usize| fam.sample_into(&theta, n, rng);
        let a = expect_mc(|x| x, sampler, &MonteCarloSpec { n: 10_000, seed: 9, batch: 128 }).unwrap();
        let b = expect_mc(|x| x, sampler, &MonteCarloSpec { n: 10_000, seed: 9, batch: 7777 }).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.std_error, b.std_error);
    }

    #[test]
    fn mc_names_the_offending_draw() {
        let fam = GaussianFixedVar::unit();
        let theta = ParameterPoint::scalar(0.0).unwrap();
        let err = expect_mc(
            |x| 1.0 / (x - x), // NaN everywhere
            |rng, n| fam.sample_into(&theta, n, rng),
            &MonteCarloSpec::new(10, 5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("draw index 0")));
    }
}
