//! Invariant-measure sampling and large-deviation estimates.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::filter::{Run, Scenario};
use crate::linalg::lambda_max;
use crate::riccati::{search_strings, Bound, PathGraph, RiccatiOps, RiccatiString, SearchCaps, WeightTable};
use crate::{Error, Result};

/// Burn-in long enough for the covariance law to settle on typical models.
/// Shorter burn-ins bias the samples toward the prior.
pub const DEFAULT_BURN_IN: usize = 10_000;
/// Covariances with trace above this are treated as divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;
/// Closed/open event sets differ by this margin.
pub const SET_TOLERANCE: f64 = 1e-9;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Statistic {
    Trace,
    LambdaMax,
}

impl Statistic {
    pub fn eval(self, m: &DMatrix<f64>) -> f64 {
        match self {
            Statistic::Trace => m.trace(),
            Statistic::LambdaMax => lambda_max(m),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Trace => "trace",
            Statistic::LambdaMax => "lambda_max",
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Statistic::Trace),
            "lambda_max" => Ok(Statistic::LambdaMax),
            _ => Err(Error::Config(format!("unknown statistic {s:?} (expected trace or lambda_max)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sample_id: u64,
    pub sensor: usize,
    pub trace: f64,
    pub lambda_max: f64,
    /// Stopped early because the covariance crossed [`DIVERGENCE_GUARD`];
    /// both statistics are then `∞`.
    pub diverged: bool,
    pub cov: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    pub gamma_bar: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub p_star_trace: f64,
    pub p_star_lambda_max: f64,
    pub samples: Vec<Sample>,
}

impl EmpiricalMeasure {
    /// Wraps precomputed samples; normalization uses `p_star`.
    pub fn from_samples(gamma_bar: f64, p_star: &DMatrix<f64>, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("an empirical measure needs at least one sample".into()));
        }
        Ok(Self {
            gamma_bar,
            burn_in: 0,
            seed: 0,
            p_star_trace: p_star.trace(),
            p_star_lambda_max: lambda_max(p_star),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn center(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Trace => self.p_star_trace,
            Statistic::LambdaMax => self.p_star_lambda_max,
        }
    }

    pub fn values(&self, stat: Statistic) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match stat {
                Statistic::Trace => s.trace,
                Statistic::LambdaMax => s.lambda_max,
            })
            .collect()
    }

    /// Statistic divided by its value at `P*`.
    pub fn normalized(&self, stat: Statistic) -> Vec<f64> {
        let c = self.center(stat);
        self.values(stat).into_iter().map(|v| v / c).collect()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.samples.iter().filter(|s| s.diverged).count() as f64 / self.samples.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub gamma_bar: f64,
    pub burn_in: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub keep_matrices: bool,
}

fn draw_sample(scenario: &Scenario, plan: &SamplingPlan, sample_id: u64) -> Result<Sample> {
    let mut run = Run::new(scenario, plan.seed, sample_id);
    let mut diverged = false;
    for _ in 0..plan.burn_in {
        run.step(scenario, plan.gamma_bar)?;
        if run
            .ensemble
            .states()
            .iter()
            .any(|s| !(s.cov.trace() <= DIVERGENCE_GUARD))
        {
            diverged = true;
            break;
        }
    }
    let sensor = run.streams.init.random_range(0..scenario.n_sensors());
    let cov = &run.ensemble.state(sensor).cov;
    Ok(Sample {
        sample_id,
        sensor,
        trace: if diverged { f64::INFINITY } else { cov.trace() },
        lambda_max: if diverged { f64::INFINITY } else { lambda_max(cov) },
        diverged,
        cov: plan.keep_matrices.then(|| cov.clone()),
    })
}

/// Independent M-GIKF runs of `burn_in` epochs, each recording the
/// covariance at a uniformly drawn sensor. Sample `i` uses streams derived
/// from `(seed, i)`, so plans sharing a seed are paired across `γ̄`.
/// Runs on the current rayon pool; results are in sample order.
pub fn sample_invariant_measure(scenario: &Scenario, p_star: &DMatrix<f64>, plan: &SamplingPlan) -> Result<EmpiricalMeasure> {
    if plan.burn_in == 0 {
        return Err(Error::Domain("burn-in must be at least one epoch".into()));
    }
    if plan.n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let samples = (0..plan.n_samples as u64)
        .into_par_iter()
        .map(|i| draw_sample(scenario, plan, i))
        .collect::<Result<Vec<_>>>()?;
    let mut m = EmpiricalMeasure::from_samples(plan.gamma_bar, p_star, samples)?;
    m.burn_in = plan.burn_in;
    m.seed = plan.seed;
    Ok(m)
}

/// Runs `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Right-continuous empirical distribution function.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("empirical CDF of an empty sample".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("empirical CDF input contains NaN".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn from_measure(measure: &EmpiricalMeasure, stat: Statistic) -> Result<Self> {
        Self::new(measure.normalized(stat))
    }

    /// Fraction of samples `≤ x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample `x` with `F(x) ≥ p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let k = (p.clamp(0.0, 1.0) * n as f64).ceil() as usize;
        self.sorted[k.clamp(1, n) - 1]
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
    pub fn len(&self) -> usize {
        self.sorted.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// Complement of the open ball `{X : |stat(X) − center| < radius}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RareEvent {
    statistic: Statistic,
    center: f64,
    radius: f64,
}

impl RareEvent {
    pub fn new(statistic: Statistic, center: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("rare-event radius must be positive, got {radius}")));
        }
        if !center.is_finite() {
            return Err(Error::Domain("rare-event center must be finite".into()));
        }
        Ok(Self {
            statistic,
            center,
            radius,
        })
    }

    /// Centered at `stat(P*)` with radius `stat(P*) / 2`.
    pub fn half_of(statistic: Statistic, p_star: &DMatrix<f64>) -> Result<Self> {
        let c = statistic.eval(p_star);
        Self::new(statistic, c, c / 2.0)
    }

    pub fn statistic(&self) -> Statistic {
        self.statistic
    }
    pub fn center(&self) -> f64 {
        self.center
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains_value(&self, v: f64) -> bool {
        (v - self.center).abs() >= self.radius
    }

    /// Closure of the event, widened by [`SET_TOLERANCE`].
    pub fn closed_contains(&self, x: &DMatrix<f64>) -> bool {
        (self.statistic.eval(x) - self.center).abs() >= self.radius - SET_TOLERANCE
    }

    /// Interior of the event, shrunk by [`SET_TOLERANCE`].
    pub fn open_contains(&self, x: &DMatrix<f64>) -> bool {
        (self.statistic.eval(x) - self.center).abs() > self.radius + SET_TOLERANCE
    }
}

/// Binomial proportion with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportion {
    pub hits: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Proportion {
    pub fn new(hits: u64, trials: u64) -> Result<Self> {
        if trials == 0 || hits > trials {
            return Err(Error::Domain(format!("invalid proportion {hits}/{trials}")));
        }
        let n = trials as f64;
        let p = hits as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let mid = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Ok(Self {
            hits,
            trials,
            p_hat: p,
            ci_lo: if hits == 0 { 0.0 } else { (mid - half).clamp(0.0, p) },
            ci_hi: if hits == trials { 1.0 } else { (mid + half).clamp(p, 1.0) },
        })
    }

    /// Binomial standard error.
    pub fn std_err(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.trials as f64).sqrt()
    }
}

pub fn rare_event_probability(measure: &EmpiricalMeasure, event: &RareEvent) -> Result<Proportion> {
    let hits = measure
        .values(event.statistic)
        .into_iter()
        .filter(|v| event.contains_value(*v))
        .count();
    Proportion::new(hits as u64, measure.len() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentEstimate {
    pub gamma_bar: f64,
    /// `ln(p̂) / γ̄`, `None` when censored (no hits).
    pub exponent: Option<f64>,
    /// Delta-method standard error of the exponent.
    pub sigma: f64,
    /// Exponent band from the Wilson interval.
    pub band: (f64, f64),
}

impl ExponentEstimate {
    pub fn censored(&self) -> bool {
        self.exponent.is_none()
    }
}

/// `ln(p) / γ̄`, `None` for `p = 0`.
pub fn decay_exponent(p: f64, gamma_bar: f64) -> Option<f64> {
    (p > 0.0).then(|| p.ln() / gamma_bar)
}

/// Per-grid-point decay exponents; zero-count cells are censored.
pub fn ld_exponent_estimate(points: &[(f64, Proportion)]) -> Result<Vec<ExponentEstimate>> {
    points
        .iter()
        .map(|&(g, p)| {
            if !(g > 0.0) {
                return Err(Error::Domain(format!("exponent needs a positive rate, got {g}")));
            }
            let band = (p.ci_lo.ln() / g, p.ci_hi.ln() / g);
            Ok(if p.hits == 0 {
                ExponentEstimate {
                    gamma_bar: g,
                    exponent: None,
                    sigma: f64::INFINITY,
                    band,
                }
            } else {
                ExponentEstimate {
                    gamma_bar: g,
                    exponent: decay_exponent(p.p_hat, g),
                    sigma: p.std_err() / (p.p_hat * g),
                    band,
                }
            })
        })
        .collect()
}

/// LD exponent bounds for a rare event.
///
/// `upper_exponent = −inf w̄` over strings reaching the closed event and
/// `lower_exponent = −inf w̲` over strings reaching its interior; an
/// unreachable event gives `−∞`.
#[derive(Clone, Debug)]
pub struct LdBounds {
    pub upper_exponent: f64,
    pub lower_exponent: f64,
    pub upper_witness: Option<RiccatiString>,
    pub lower_witness: Option<RiccatiString>,
    pub capped: bool,
}

pub fn ld_bounds(
    ops: &RiccatiOps,
    p_star: &DMatrix<f64>,
    table: &WeightTable,
    graph: &PathGraph,
    event: &RareEvent,
    caps: &SearchCaps,
) -> Result<LdBounds> {
    let upper = search_strings(ops, p_star, table, graph, Bound::Upper, caps, |x| event.closed_contains(x))?;
    let lower = search_strings(ops, p_star, table, graph, Bound::Lower, caps, |x| event.open_contains(x))?;
    let out = LdBounds {
        upper_exponent: -upper.value,
        lower_exponent: -lower.value,
        upper_witness: upper.witness,
        lower_witness: lower.witness,
        capped: upper.capped || lower.capped,
    };
    if out.lower_exponent > out.upper_exponent + 1e-12 && !out.capped {
        return Err(Error::Internal(format!(
            "LD lower bound {} exceeds upper bound {}",
            out.lower_exponent, out.upper_exponent
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiracRow {
    pub gamma_bar: f64,
    pub median: f64,
    /// Distribution-free 95% interval for the median.
    pub median_ci: (f64, f64),
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiracReport {
    pub rows: Vec<DiracRow>,
    pub strictly_decreasing: bool,
    /// Medians never rise beyond the previous point's interval.
    pub nonincreasing: bool,
}

/// Spread of `|Tr/Tr(P*) − 1|` across a grid of measures sorted by `γ̄`.
pub fn dirac_convergence_report(measures: &[EmpiricalMeasure]) -> Result<DiracReport> {
    if measures.len() < 2 {
        return Err(Error::Domain("Dirac report needs at least two grid points".into()));
    }
    let mut ordered: Vec<&EmpiricalMeasure> = measures.iter().collect();
    ordered.sort_by(|a, b| a.gamma_bar.total_cmp(&b.gamma_bar));
    let rows = ordered
        .iter()
        .map(|m| {
            let dev: Vec<f64> = m.normalized(Statistic::Trace).into_iter().map(|v| (v - 1.0).abs()).collect();
            let cdf = EmpiricalCdf::new(dev)?;
            let n = cdf.len() as f64;
            let half = Z95 * n.sqrt() / 2.0;
            let lo = cdf.quantile(((n / 2.0 - half) / n).max(0.0));
            let hi = cdf.quantile(((n / 2.0 + half) / n).min(1.0));
            Ok(DiracRow {
                gamma_bar: m.gamma_bar,
                median: cdf.quantile(0.5),
                median_ci: (lo, hi),
                p90: cdf.quantile(0.9),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let strictly_decreasing = rows.windows(2).all(|w| w[1].median < w[0].median);
    let nonincreasing = rows.windows(2).all(|w| w[1].median <= w[0].median_ci.1);
    Ok(DiracReport {
        rows,
        strictly_decreasing,
        nonincreasing,
    })
}
