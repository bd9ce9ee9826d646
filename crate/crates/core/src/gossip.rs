//! Observation dissemination by random pairwise exchanges.
//!
//! Each epoch a Poisson number of link activations is drawn; every
//! activation swaps the observation indices held at its two endpoints. The
//! index set of sensor `n` is everything that passed through position `n`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::model::SubsetIndex;
use crate::network::GossipTopology;
use crate::{Error, Result};

/// Poisson(`γ̄`) message count. `γ̄ = 0` returns 0 without touching `rng`.
pub fn sample_message_count<R: Rng + ?Sized>(gamma_bar: f64, rng: &mut R) -> Result<u64> {
    if !(gamma_bar >= 0.0 && gamma_bar.is_finite()) {
        return Err(Error::Domain(format!("dissemination rate must be finite and >= 0, got {gamma_bar}")));
    }
    if gamma_bar == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(gamma_bar).map_err(|e| Error::Domain(format!("poisson({gamma_bar}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisseminationRound {
    pub message_count: u64,
    pub activations: Vec<(usize, usize)>,
    /// `index_sets[n]` is the set of observations available at sensor `n`.
    pub index_sets: Vec<SubsetIndex>,
    /// Ownership vectors `s^0, …, s^M` (`s^i[n]` = observation held at `n`).
    pub trace: Option<Vec<Vec<usize>>>,
    /// Set when activations were requested on a graph without links.
    pub no_links: bool,
}

/// Applies a given activation sequence starting from `s^0 = identity`.
pub fn apply_activations(
    topology: &GossipTopology,
    activations: &[(usize, usize)],
    audit: bool,
) -> Result<DisseminationRound> {
    let n = topology.len();
    let mut owner: Vec<usize> = (0..n).collect();
    let mut sets: Vec<SubsetIndex> = (0..n).map(SubsetIndex::singleton).collect();
    let mut trace = audit.then(|| vec![owner.clone()]);
    for &(u, v) in activations {
        if u >= n || v >= n || u == v || !topology.has_link(u, v) {
            return Err(Error::Contract(format!("activation ({}, {}) is not a link", u + 1, v + 1)));
        }
        owner.swap(u, v);
        sets[u].insert(owner[u]);
        sets[v].insert(owner[v]);
        if let Some(t) = trace.as_mut() {
            t.push(owner.clone());
        }
    }
    Ok(DisseminationRound {
        message_count: activations.len() as u64,
        activations: activations.to_vec(),
        index_sets: sets,
        trace,
        no_links: false,
    })
}

/// One dissemination round: Poisson count, then uniform links from `ℰ`.
pub fn run_dissemination<R: Rng + ?Sized>(
    topology: &GossipTopology,
    gamma_bar: f64,
    audit: bool,
    rng: &mut R,
) -> Result<DisseminationRound> {
    let count = sample_message_count(gamma_bar, rng)?;
    let edges = topology.edges();
    if edges.is_empty() {
        let mut round = apply_activations(topology, &[], audit)?;
        round.message_count = count;
        round.no_links = count > 0;
        return Ok(round);
    }
    let activations: Vec<(usize, usize)> = (0..count)
        .map(|_| edges[rng.random_range(0..edges.len())])
        .collect();
    apply_activations(topology, &activations, audit)
}

/// Index sets reconstructed from an ownership trace as the union of what
/// each position held.
pub fn index_sets_from_trace(trace: &[Vec<usize>]) -> Vec<SubsetIndex> {
    let n = trace.first().map_or(0, Vec::len);
    (0..n)
        .map(|pos| SubsetIndex::from_members(trace.iter().map(|s| s[pos])))
        .collect()
}

/// Writes `round,step,position,observation_index` rows (1-based ids).
pub fn write_audit_csv<W: Write>(rounds: &[DisseminationRound], mut out: W) -> Result<()> {
    writeln!(out, "round,step,position,observation_index")?;
    for (r, round) in rounds.iter().enumerate() {
        let Some(trace) = &round.trace else { continue };
        for (step, owner) in trace.iter().enumerate() {
            for (pos, obs) in owner.iter().enumerate() {
                writeln!(out, "{r},{step},{},{}", pos + 1, obs + 1)?;
            }
        }
    }
    Ok(())
}

/// Monte Carlo frequencies of the realized index sets.
#[derive(Clone, Debug, Default)]
pub struct EmpiricalQ {
    pub trials: u64,
    counts: Vec<BTreeMap<u32, u64>>,
}

impl EmpiricalQ {
    pub fn count(&self, sensor: usize, subset: SubsetIndex) -> u64 {
        self.counts[sensor].get(&subset.bits()).copied().unwrap_or(0)
    }

    pub fn q_hat(&self, sensor: usize, subset: SubsetIndex) -> f64 {
        self.count(sensor, subset) as f64 / self.trials as f64
    }

    /// Binomial standard error of `q_hat`.
    pub fn std_err(&self, sensor: usize, subset: SubsetIndex) -> f64 {
        let p = self.q_hat(sensor, subset);
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Observed `(subset, q_hat)` pairs for one sensor.
    pub fn distribution(&self, sensor: usize) -> Vec<(SubsetIndex, f64)> {
        let n = self.counts.len();
        self.counts[sensor]
            .iter()
            .map(|(&bits, &c)| {
                (
                    SubsetIndex::new(bits, n).expect("recorded subsets are in range"),
                    c as f64 / self.trials as f64,
                )
            })
            .collect()
    }
}

pub fn estimate_q<R: Rng + ?Sized>(
    topology: &GossipTopology,
    gamma_bar: f64,
    trials: u64,
    rng: &mut R,
) -> Result<EmpiricalQ> {
    if trials == 0 {
        return Err(Error::Domain("estimate_q needs at least one trial".into()));
    }
    let mut counts = vec![BTreeMap::new(); topology.len()];
    for _ in 0..trials {
        let round = run_dissemination(topology, gamma_bar, false, rng)?;
        for (n, s) in round.index_sets.iter().enumerate() {
            *counts[n].entry(s.bits()).or_insert(0) += 1;
        }
    }
    Ok(EmpiricalQ { trials, counts })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentPoint {
    pub gamma_bar: f64,
    pub q_hat: f64,
    /// `ln(q_hat) / γ̄`; `-∞` when the subset was never observed.
    pub exponent: f64,
    /// Delta-method standard error of `exponent`.
    pub sigma: f64,
}

/// Empirical decay exponents `(1/γ̄) ln q̂_n(ȷ)` over a grid.
pub fn exponent_estimate<R: Rng + ?Sized>(
    topology: &GossipTopology,
    grid: &[f64],
    subset: SubsetIndex,
    sensor: usize,
    trials: u64,
    rng: &mut R,
) -> Result<Vec<ExponentPoint>> {
    if subset.is_full(topology.len()) {
        return Err(Error::Domain("exponent of the full set is not defined".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Domain(format!("exponent grid must be strictly positive, got {g}")));
    }
    grid.iter()
        .map(|&g| {
            let q = estimate_q(topology, g, trials, rng)?;
            let p = q.q_hat(sensor, subset);
            let (exponent, sigma) = if p > 0.0 {
                (p.ln() / g, q.std_err(sensor, subset) / (p * g))
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            Ok(ExponentPoint {
                gamma_bar: g,
                q_hat: p,
                exponent,
                sigma,
            })
        })
        .collect()
}
