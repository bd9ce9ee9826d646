//! GIKF and M-GIKF epoch loops.
//!
//! Every epoch the sensors swap filter states along a random matching, then
//! each sensor runs one Kalman predict/update with the observations it holds.
//! Alongside the sensor states the ensemble tracks "particles": particle `n`
//! is the covariance that started at sensor `n`, and `π_k(n)` is where it
//! currently lives.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::gossip::run_dissemination;
use crate::linalg::{cholesky_pd, lambda_max};
use crate::model::{draw_initial_state, propagate, SubsetIndex};
use crate::network::{GossipTopology, Matching, MatchingDistribution};
use crate::riccati::RiccatiOps;
use crate::seed::{stream_rng, SimRng, Stream};
use crate::{Error, Result};

/// Everything a run needs besides its random streams.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub ops: RiccatiOps,
    pub topology: GossipTopology,
    pub matchings: MatchingDistribution,
}

impl Scenario {
    pub fn new(ops: RiccatiOps, topology: GossipTopology, matchings: MatchingDistribution) -> Result<Self> {
        let n = ops.n_sensors();
        if topology.len() != n {
            return Err(Error::Dimension {
                context: "topology nodes vs sensors",
                expected: n,
                got: topology.len(),
            });
        }
        if matchings.support()[0].len() != n {
            return Err(Error::Dimension {
                context: "matching size vs sensors",
                expected: n,
                got: matchings.support()[0].len(),
            });
        }
        Ok(Self {
            ops,
            topology,
            matchings,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.ops.n_sensors()
    }
}

/// Independent random streams of one run.
#[derive(Clone, Debug)]
pub struct Streams {
    pub swap: SimRng,
    pub dissemination: SimRng,
    pub noise: SimRng,
    pub init: SimRng,
}

impl Streams {
    pub fn new(master: u64, sample_id: u64) -> Self {
        Self {
            swap: stream_rng(master, sample_id, Stream::Swap),
            dissemination: stream_rng(master, sample_id, Stream::Dissemination),
            noise: stream_rng(master, sample_id, Stream::Noise),
            init: stream_rng(master, sample_id, Stream::Init),
        }
    }
}

/// Predicted estimate `x̂_{k|k−1}` and its covariance `P̂_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorState {
    pub estimate: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterEnsemble {
    states: Vec<SensorState>,
    location: Vec<usize>,
    particles: Vec<DMatrix<f64>>,
    epoch: usize,
}

impl FilterEnsemble {
    /// All sensors start from the same `(x̂_0, P̂_0)`.
    pub fn new(n_sensors: usize, initial: SensorState) -> Self {
        Self {
            particles: vec![initial.cov.clone(); n_sensors],
            states: vec![initial; n_sensors],
            location: (0..n_sensors).collect(),
            epoch: 0,
        }
    }

    /// Zero estimate with the system's prior covariance.
    pub fn from_prior(scenario: &Scenario) -> Self {
        let sys = scenario.ops.system();
        Self::new(
            scenario.n_sensors(),
            SensorState {
                estimate: DVector::zeros(sys.dim()),
                cov: sys.initial_cov().clone(),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn states(&self) -> &[SensorState] {
        &self.states
    }
    pub fn state(&self, sensor: usize) -> &SensorState {
        &self.states[sensor]
    }
    /// `π_k(n)`: the sensor currently holding particle `n`.
    pub fn location(&self, particle: usize) -> usize {
        self.location[particle]
    }
    pub fn locations(&self) -> &[usize] {
        &self.location
    }
    pub fn particle(&self, n: usize) -> &DMatrix<f64> {
        &self.particles[n]
    }
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Particle `n` equals the covariance at sensor `π_k(n)`, bit for bit.
    pub fn check_particles(&self) -> Result<()> {
        for (n, p) in self.particles.iter().enumerate() {
            if *p != self.states[self.location[n]].cov {
                return Err(Error::Internal(format!(
                    "particle {} diverged from sensor {} at epoch {}",
                    n + 1,
                    self.location[n] + 1,
                    self.epoch
                )));
            }
        }
        Ok(())
    }
}

/// Sensors `n` and `partner(n)` exchange states; particle locations follow.
pub fn swap_states(ensemble: &mut FilterEnsemble, matching: &Matching) -> Result<()> {
    if matching.len() != ensemble.len() {
        return Err(Error::Contract(format!(
            "matching over {} nodes applied to {} sensors",
            matching.len(),
            ensemble.len()
        )));
    }
    let old = std::mem::take(&mut ensemble.states);
    let mut slots: Vec<Option<SensorState>> = old.into_iter().map(Some).collect();
    ensemble.states = (0..matching.len())
        .map(|n| slots[matching.partner(n)].take().expect("matching is a permutation"))
        .collect();
    for loc in &mut ensemble.location {
        *loc = matching.partner(*loc);
    }
    Ok(())
}

/// `f_𝓘(P)`; the empty set never occurs in the filters and is rejected.
pub fn covariance_update(ops: &RiccatiOps, p: &DMatrix<f64>, subset: SubsetIndex) -> Result<DMatrix<f64>> {
    if subset.is_empty() {
        return Err(Error::Contract("a sensor always holds its own observation".into()));
    }
    ops.apply(subset, p)
}

/// One Kalman predict/update with the stacked observations of `subset`
/// (ascending sensor order). An empty subset is a pure prediction.
pub fn estimate_update(
    ops: &RiccatiOps,
    state: &SensorState,
    y: &DVector<f64>,
    subset: SubsetIndex,
) -> Result<SensorState> {
    let stacked = ops.stacked(subset)?;
    let (c, r) = (&stacked.0, &stacked.1);
    if y.len() != c.nrows() {
        return Err(Error::Dimension {
            context: "stacked observation",
            expected: c.nrows(),
            got: y.len(),
        });
    }
    let f = ops.system().f();
    let p = &state.cov;
    let mut estimate = f * &state.estimate;
    if c.nrows() > 0 {
        let s = c * p * c.transpose() + r;
        let chol = cholesky_pd(&s)
            .ok_or_else(|| Error::Internal("innovation covariance is not positive definite".into()))?;
        let innovation = y - c * &state.estimate;
        estimate += f * p * c.transpose() * chol.solve(&innovation);
    }
    Ok(SensorState {
        estimate,
        cov: ops.apply(subset, p)?,
    })
}

/// Centralized filter step using every sensor's observation.
pub fn centralized_step(ops: &RiccatiOps, state: &SensorState, observations: &[DVector<f64>]) -> Result<SensorState> {
    let full = ops.full();
    let y = ops.suite().stack_observations(full, observations)?;
    estimate_update(ops, state, &y, full)
}

const RELEASE_CHECK_EVERY: usize = 100;

fn step_with<S>(
    ensemble: &mut FilterEnsemble,
    scenario: &Scenario,
    truth: &DVector<f64>,
    streams: &mut Streams,
    index_sets: S,
) -> Result<Vec<SubsetIndex>>
where
    S: FnOnce(&mut Streams) -> Result<Vec<SubsetIndex>>,
{
    let n = ensemble.len();
    if n != scenario.n_sensors() {
        return Err(Error::Dimension {
            context: "ensemble size",
            expected: scenario.n_sensors(),
            got: n,
        });
    }
    let matching = scenario.matchings.sample(&mut streams.swap).clone();
    swap_states(ensemble, &matching)?;

    let suite = scenario.ops.suite();
    let observations = suite.observe_all(truth, &mut streams.noise)?;
    let sets = index_sets(streams)?;

    for (sensor, subset) in sets.iter().enumerate() {
        if !subset.contains(sensor) {
            return Err(Error::Internal(format!("sensor {} lost its own observation", sensor + 1)));
        }
        let y = suite.stack_observations(*subset, &observations)?;
        ensemble.states[sensor] = estimate_update(&scenario.ops, &ensemble.states[sensor], &y, *subset)?;
    }
    for particle in 0..n {
        let at = ensemble.location[particle];
        ensemble.particles[particle] = covariance_update(&scenario.ops, &ensemble.particles[particle], sets[at])?;
    }
    ensemble.epoch += 1;
    if cfg!(debug_assertions) || ensemble.epoch % RELEASE_CHECK_EVERY == 0 {
        ensemble.check_particles()?;
    }
    Ok(sets)
}

/// One M-GIKF epoch at dissemination rate `γ̄`; returns the index sets used.
pub fn step_mgikf(
    ensemble: &mut FilterEnsemble,
    scenario: &Scenario,
    gamma_bar: f64,
    truth: &DVector<f64>,
    streams: &mut Streams,
) -> Result<Vec<SubsetIndex>> {
    step_with(ensemble, scenario, truth, streams, |s| {
        Ok(run_dissemination(&scenario.topology, gamma_bar, false, &mut s.dissemination)?.index_sets)
    })
}

/// One GIKF epoch: every sensor uses only its own observation.
pub fn step_gikf(
    ensemble: &mut FilterEnsemble,
    scenario: &Scenario,
    truth: &DVector<f64>,
    streams: &mut Streams,
) -> Result<Vec<SubsetIndex>> {
    let n = ensemble.len();
    step_with(ensemble, scenario, truth, streams, |_| Ok((0..n).map(SubsetIndex::singleton).collect()))
}

/// A complete M-GIKF run: ensemble, shared truth and streams.
#[derive(Clone, Debug)]
pub struct Run {
    pub ensemble: FilterEnsemble,
    pub truth: DVector<f64>,
    pub streams: Streams,
}

impl Run {
    pub fn new(scenario: &Scenario, master: u64, sample_id: u64) -> Self {
        let mut streams = Streams::new(master, sample_id);
        let truth = draw_initial_state(scenario.ops.system(), &mut streams.init);
        Self {
            ensemble: FilterEnsemble::from_prior(scenario),
            truth,
            streams,
        }
    }

    /// One epoch followed by the signal transition.
    pub fn step(&mut self, scenario: &Scenario, gamma_bar: f64) -> Result<Vec<SubsetIndex>> {
        let sets = step_mgikf(&mut self.ensemble, scenario, gamma_bar, &self.truth, &mut self.streams)?;
        self.truth = propagate(scenario.ops.system(), &self.truth, &mut self.streams.noise);
        Ok(sets)
    }

    pub fn step_gikf(&mut self, scenario: &Scenario) -> Result<Vec<SubsetIndex>> {
        let sets = step_gikf(&mut self.ensemble, scenario, &self.truth, &mut self.streams)?;
        self.truth = propagate(scenario.ops.system(), &self.truth, &mut self.streams.noise);
        Ok(sets)
    }
}

/// Stationary switching sequence `P̃(k+1) = f_{𝓘 at z̃(k)}(P̃(k))`.
#[derive(Clone, Debug)]
pub struct AuxiliaryPath {
    pub locations: Vec<usize>,
    pub covs: Vec<DMatrix<f64>>,
}

/// `z̃(0)` is uniform on the sensors and moves along sampled matchings,
/// i.e. with transition matrix `Ā`.
pub fn run_auxiliary_sequence(
    scenario: &Scenario,
    gamma_bar: f64,
    p0: &DMatrix<f64>,
    k_max: usize,
    streams: &mut Streams,
) -> Result<AuxiliaryPath> {
    use rand::Rng;
    let n = scenario.n_sensors();
    let mut z = streams.init.random_range(0..n);
    let mut locations = Vec::with_capacity(k_max + 1);
    let mut covs = Vec::with_capacity(k_max + 1);
    locations.push(z);
    covs.push(p0.clone());
    for _ in 0..k_max {
        let round = run_dissemination(&scenario.topology, gamma_bar, false, &mut streams.dissemination)?;
        let next = covariance_update(&scenario.ops, covs.last().unwrap(), round.index_sets[z])?;
        covs.push(next);
        z = scenario.matchings.sample(&mut streams.swap).partner(z);
        locations.push(z);
    }
    Ok(AuxiliaryPath { locations, covs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub sensor: usize,
    pub trace: f64,
    pub lambda_max: f64,
    pub err_norm: f64,
}

/// Per-sensor covariance and error summaries for `epochs` epochs, starting
/// with the prior at epoch 0.
pub fn run_trajectory(scenario: &Scenario, gamma_bar: f64, epochs: usize, master: u64) -> Result<Vec<TrajectoryRow>> {
    let mut run = Run::new(scenario, master, 0);
    let mut rows = Vec::with_capacity((epochs + 1) * scenario.n_sensors());
    for epoch in 0..=epochs {
        if epoch > 0 {
            run.step(scenario, gamma_bar)?;
        }
        for (sensor, s) in run.ensemble.states().iter().enumerate() {
            rows.push(TrajectoryRow {
                epoch,
                sensor,
                trace: s.cov.trace(),
                lambda_max: lambda_max(&s.cov),
                err_norm: (&s.estimate - &run.truth).norm(),
            });
        }
    }
    Ok(rows)
}

/// Writes `epoch,sensor,trace_P,lambda_max_P,err_norm` rows (1-based sensor).
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut out: W) -> Result<()> {
    writeln!(out, "epoch,sensor,trace_P,lambda_max_P,err_norm")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.12e},{:.12e},{:.12e}",
            r.epoch,
            r.sensor + 1,
            r.trace,
            r.lambda_max,
            r.err_norm
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lambda_min;
    use crate::model::{triad, LinearSystem, Sensor, SensorSuite};
    use crate::seed::rng_from_seed;

    fn scalar_ops(r: f64) -> RiccatiOps {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let s = Sensor::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, r)).unwrap();
        let suite = SensorSuite::new(&sys, vec![s]).unwrap();
        RiccatiOps::new(&sys, &suite)
    }

    fn triad_scenario() -> Scenario {
        let (sys, suite) = triad();
        let topo = GossipTopology::complete(3).unwrap();
        let m = MatchingDistribution::greedy_maximal(&topo, 0).unwrap();
        Scenario::new(RiccatiOps::new(&sys, &suite), topo, m).unwrap()
    }

    fn five_node_scenario() -> Scenario {
        let (sys, suite) = crate::model::rotation_chain(4, 5, 1.05).unwrap();
        let topo = GossipTopology::ring(5).unwrap();
        let m = MatchingDistribution::greedy_maximal(&topo, 1).unwrap();
        Scenario::new(RiccatiOps::new(&sys, &suite), topo, m).unwrap()
    }

    fn labelled(n: usize) -> FilterEnsemble {
        let mut e = FilterEnsemble::new(
            n,
            SensorState {
                estimate: DVector::zeros(1),
                cov: DMatrix::identity(1, 1),
            },
        );
        for (i, s) in e.states.iter_mut().enumerate() {
            s.estimate[0] = i as f64;
        }
        e
    }

    #[test]
    fn identity_swap_is_noop() {
        let mut e = labelled(3);
        let before = e.clone();
        swap_states(&mut e, &Matching::identity(3)).unwrap();
        assert_eq!(e, before);
        assert!(swap_states(&mut e, &Matching::identity(4)).is_err());
    }

    #[test]
    fn swap_twice_restores() {
        let mut e = labelled(3);
        let before = e.clone();
        let m = Matching::single_edge(3, 0, 1);
        swap_states(&mut e, &m).unwrap();
        assert_eq!(e.state(0).estimate[0], 1.0);
        assert_eq!(e.state(1).estimate[0], 0.0);
        assert_eq!(e.location(0), 1);
        swap_states(&mut e, &m).unwrap();
        assert_eq!(e, before);
    }

    #[test]
    fn locations_follow_composed_matchings() {
        let s = five_node_scenario();
        let mut rng = rng_from_seed(2);
        let mut e = labelled(5);
        let log: Vec<Matching> = (0..100).map(|_| s.matchings.sample(&mut rng).clone()).collect();
        for m in &log {
            swap_states(&mut e, m).unwrap();
        }
        for n in 0..5 {
            let z = log.iter().fold(n, |z, m| m.partner(z));
            assert_eq!(e.location(n), z);
            // The state that started at n is wherever particle n went.
            assert_eq!(e.state(z).estimate[0], n as f64);
        }
    }

    #[test]
    fn covariance_update_cases() {
        let s = triad_scenario();
        let p_star = s.ops.centralized_fixed_point(1e-13, 100_000).unwrap();
        let y = covariance_update(&s.ops, &p_star, s.ops.full()).unwrap();
        assert!((&y - &p_star).norm() < 1e-10 * p_star.norm());
        assert!(covariance_update(&s.ops, &p_star, SubsetIndex::empty()).is_err());
        let single = SubsetIndex::singleton(1);
        assert_eq!(
            covariance_update(&s.ops, &p_star, single).unwrap(),
            crate::riccati::riccati_op(s.ops.system(), s.ops.suite(), single, &p_star).unwrap()
        );
    }

    #[test]
    fn empty_subset_is_pure_prediction() {
        let s = triad_scenario();
        let state = SensorState {
            estimate: DVector::from_vec(vec![1.0, -2.0]),
            cov: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        };
        let out = estimate_update(&s.ops, &state, &DVector::zeros(0), SubsetIndex::empty()).unwrap();
        let f = s.ops.system().f();
        assert_eq!(out.estimate, f * &state.estimate);
        assert!((out.cov - (f * &state.cov * f.transpose() + s.ops.system().q())).norm() < 1e-14);
        assert!(estimate_update(&s.ops, &state, &DVector::zeros(2), SubsetIndex::singleton(0)).is_err());
    }

    #[test]
    fn near_perfect_observation() {
        // Posterior is exact, so the prediction error is the process noise.
        let ops = scalar_ops(1e-8);
        let state = SensorState {
            estimate: DVector::zeros(1),
            cov: DMatrix::from_element(1, 1, 3.0),
        };
        let out = estimate_update(&ops, &state, &DVector::from_element(1, 0.7), SubsetIndex::singleton(0)).unwrap();
        assert!((out.cov[(0, 0)] - 1.0).abs() < 1e-6);
        assert!((out.estimate[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn estimate_and_covariance_paths_agree() {
        let s = triad_scenario();
        let mut rng = rng_from_seed(6);
        let mut state = SensorState {
            estimate: DVector::zeros(2),
            cov: DMatrix::identity(2, 2),
        };
        let mut cov = state.cov.clone();
        for k in 0..100u32 {
            let subset = SubsetIndex::new(1 + k % 7, 3).unwrap();
            let x = DVector::from_vec(vec![rand::Rng::random::<f64>(&mut rng), 0.3]);
            let obs = s.ops.suite().observe_all(&x, &mut rng).unwrap();
            let y = s.ops.suite().stack_observations(subset, &obs).unwrap();
            state = estimate_update(&s.ops, &state, &y, subset).unwrap();
            cov = covariance_update(&s.ops, &cov, subset).unwrap();
            assert_eq!(state.cov, cov);
        }
    }

    #[test]
    fn particles_track_sensor_covariances() {
        let s = five_node_scenario();
        for seed in 0..3 {
            let mut run = Run::new(&s, seed, 0);
            for _ in 0..200 {
                run.step(&s, 2.0).unwrap();
                run.ensemble.check_particles().unwrap();
            }
        }
    }

    #[test]
    fn zero_rate_equals_gikf() {
        let s = triad_scenario();
        let mut a = Run::new(&s, 9, 0);
        let mut b = Run::new(&s, 9, 0);
        for _ in 0..300 {
            let sa = a.step(&s, 0.0).unwrap();
            let sb = b.step_gikf(&s).unwrap();
            assert_eq!(sa, sb);
            assert_eq!(a.ensemble, b.ensemble);
            assert_eq!(a.truth, b.truth);
        }
    }

    #[test]
    fn huge_rate_reaches_everyone() {
        let s = triad_scenario();
        let mut run = Run::new(&s, 3, 0);
        let mut full = 0;
        let epochs = 1000;
        for _ in 0..epochs {
            full += run.step(&s, 1000.0).unwrap().iter().filter(|x| x.is_full(3)).count();
        }
        assert!(full as f64 / (3 * epochs) as f64 >= 0.999);
        let p_star = s.ops.centralized_fixed_point(1e-13, 100_000).unwrap();
        let cov = &run.ensemble.state(0).cov;
        assert!((cov - &p_star).norm() < 1e-6 * p_star.norm());
    }

    #[test]
    fn single_sensor_is_kalman_filter() {
        let ops = scalar_ops(1.0);
        let topo = GossipTopology::complete(1).unwrap();
        let m = MatchingDistribution::uniform(&topo, vec![Matching::identity(1)]).unwrap();
        let s = Scenario::new(ops.clone(), topo, m).unwrap();
        let mut run = Run::new(&s, 4, 0);
        let mut kf = run.ensemble.state(0).clone();
        for _ in 0..50 {
            let mut shadow = run.streams.clone();
            let truth = run.truth.clone();
            run.step(&s, 5.0).unwrap();
            // Replay the observation draw on a copy of the noise stream.
            let obs = ops.suite().observe_all(&truth, &mut shadow.noise).unwrap();
            kf = centralized_step(&ops, &kf, &obs).unwrap();
            assert_eq!(&kf, run.ensemble.state(0));
        }
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((kf.cov[(0, 0)] - phi).abs() < 1e-9);
    }

    #[test]
    fn centralized_covariance_converges() {
        let s = triad_scenario();
        let p_star = s.ops.centralized_fixed_point(1e-13, 100_000).unwrap();
        let obs = vec![DVector::zeros(1); 3];
        let mut state = SensorState {
            estimate: DVector::zeros(2),
            cov: s.ops.system().q().clone(),
        };
        let mut steps = 0;
        while (&state.cov - &p_star).norm() > 1e-9 {
            state = centralized_step(&s.ops, &state, &obs).unwrap();
            steps += 1;
            assert!(steps <= 1000);
        }
    }

    #[test]
    fn scalar_error_covariance_matches_riccati() {
        let ops = scalar_ops(1.0);
        let sys = ops.system().clone();
        let mut rng = rng_from_seed(12);
        let mut x = DVector::zeros(1);
        let mut state = SensorState {
            estimate: DVector::zeros(1),
            cov: DMatrix::identity(1, 1),
        };
        let (mut sum, mut count) = (0.0, 0);
        for k in 0..10_100 {
            let obs = ops.suite().observe_all(&x, &mut rng).unwrap();
            if k >= 100 {
                let e = state.estimate[0] - x[0];
                sum += e * e;
                count += 1;
            }
            state = centralized_step(&ops, &state, &obs).unwrap();
            x = propagate(&sys, &x, &mut rng);
        }
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sum / count as f64 - phi).abs() < 0.1 * phi);
    }

    #[test]
    fn auxiliary_transitions_follow_mean_adjacency() {
        let s = triad_scenario();
        let mut streams = Streams::new(1, 0);
        let path = run_auxiliary_sequence(&s, 1.0, &DMatrix::identity(2, 2), 100_000, &mut streams).unwrap();
        let abar = s.matchings.mean_adjacency();
        let mut counts = DMatrix::<f64>::zeros(3, 3);
        for w in path.locations.windows(2) {
            counts[(w[0], w[1])] += 1.0;
        }
        for i in 0..3 {
            let row = counts.row(i).sum();
            for j in 0..3 {
                assert!((counts[(i, j)] / row - abar.matrix()[(i, j)]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn auxiliary_with_single_sensor_is_deterministic() {
        let ops = scalar_ops(1.0);
        let topo = GossipTopology::complete(1).unwrap();
        let m = MatchingDistribution::uniform(&topo, vec![Matching::identity(1)]).unwrap();
        let s = Scenario::new(ops, topo, m).unwrap();
        let path = run_auxiliary_sequence(&s, 3.0, &DMatrix::identity(1, 1), 60, &mut Streams::new(0, 0)).unwrap();
        assert!(path.locations.iter().all(|&z| z == 0));
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((path.covs[60][(0, 0)] - phi).abs() < 1e-9);
    }

    #[test]
    fn covariances_stay_psd_and_finite() {
        let s = five_node_scenario();
        let mut run = Run::new(&s, 5, 0);
        for _ in 0..10_000 {
            run.step(&s, 0.5).unwrap();
        }
        for st in run.ensemble.states() {
            assert!(lambda_min(&st.cov) >= -1e-9);
            assert!(st.cov.trace().is_finite() && st.cov.trace() < 1e6);
        }
    }

    #[test]
    fn trajectory_csv_rows() {
        let s = triad_scenario();
        let rows = run_trajectory(&s, 2.0, 4, 7).unwrap();
        assert_eq!(rows.len(), 15);
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,sensor,trace_P,lambda_max_P,err_norm\n0,1,"));
        assert_eq!(text.lines().count(), 16);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn larger_sets_are_more_informative(a in 1u32..8, b in 1u32..8, d in 0.1f64..5.0, o in -0.9f64..0.9) {
                let s = triad_scenario();
                let small = SubsetIndex::new(a, 3).unwrap();
                let big = SubsetIndex::new(a | b, 3).unwrap();
                let x = DMatrix::from_row_slice(2, 2, &[d, o * d.sqrt(), o * d.sqrt(), 1.0]);
                let gap = covariance_update(&s.ops, &x, small).unwrap() - covariance_update(&s.ops, &x, big).unwrap();
                prop_assert!(lambda_min(&gap) >= -1e-9 * x.norm());
            }
        }
    }
}
