//! Linear signal/observation model and its structural assumptions.
//!
//! The signal evolves as `x_{k+1} = F x_k + w_k` with `w_k ~ N(0, Q)`, and
//! sensor `n` observes `y^n_k = C_n x_k + v^n_k` with `v^n_k ~ N(0, R_n)`.
//! Sensors are indexed from 0 internally; subset indices are bitmasks over
//! those positions.

use std::fmt;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, block_diag, cholesky_pd, is_psd, is_symmetric, sqrt_psd};
use crate::{Error, Result};

/// Relative threshold on the smallest singular value for rank decisions.
pub const TOL_RANK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LinearSystem {
    f: DMatrix<f64>,
    q: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    initial_cov: DMatrix<f64>,
    sampling_interval: f64,
}

impl LinearSystem {
    /// Builds a system with `P̂_0 = I` and unit sampling interval.
    pub fn new(f: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let m = f.nrows();
        if m == 0 || !linalg::is_square(&f) {
            return Err(Error::Config(format!(
                "F must be a non-empty square matrix, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        if q.shape() != (m, m) {
            return Err(Error::Dimension {
                context: "process noise covariance Q",
                expected: m,
                got: q.nrows(),
            });
        }
        if f.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("F and Q must have finite entries".into()));
        }
        if !is_psd(&q) {
            return Err(Error::Config("Q must be symmetric positive semidefinite".into()));
        }
        let q_sqrt = sqrt_psd(&q);
        Ok(Self {
            f,
            q_sqrt,
            q,
            initial_cov: DMatrix::identity(m, m),
            sampling_interval: 1.0,
        })
    }

    pub fn with_initial_cov(mut self, p0: DMatrix<f64>) -> Result<Self> {
        if p0.shape() != self.f.shape() {
            return Err(Error::Dimension {
                context: "initial covariance",
                expected: self.dim(),
                got: p0.nrows(),
            });
        }
        if !is_psd(&p0) {
            return Err(Error::Config("initial covariance must be PSD".into()));
        }
        self.initial_cov = p0;
        Ok(self)
    }

    /// The interval is recorded for reporting only; epochs are integers.
    pub fn with_sampling_interval(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("sampling interval must be positive, got {delta}")));
        }
        self.sampling_interval = delta;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn q_sqrt(&self) -> &DMatrix<f64> {
        &self.q_sqrt
    }
    pub fn initial_cov(&self) -> &DMatrix<f64> {
        &self.initial_cov
    }
    pub fn sampling_interval(&self) -> f64 {
        self.sampling_interval
    }
}

#[derive(Clone, Debug)]
pub struct Sensor {
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    r_chol: DMatrix<f64>,
}

impl Sensor {
    pub fn new(c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let m = c.nrows();
        if m == 0 {
            return Err(Error::Config("sensor observation dimension must be positive".into()));
        }
        if r.shape() != (m, m) {
            return Err(Error::Dimension {
                context: "sensor noise covariance R",
                expected: m,
                got: r.nrows(),
            });
        }
        if !is_symmetric(&r, 1e-10) {
            return Err(Error::Config("sensor noise covariance must be symmetric".into()));
        }
        let chol = cholesky_pd(&r)
            .ok_or_else(|| Error::Config("sensor noise covariance must be positive definite".into()))?;
        Ok(Self {
            c,
            r_chol: chol.l(),
            r,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Draws `y = C x + v`, `v ~ N(0, R)`.
    pub fn observe<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        if x.len() != self.c.ncols() {
            return Err(Error::Dimension {
                context: "observe: state vector",
                expected: self.c.ncols(),
                got: x.len(),
            });
        }
        let z = DVector::from_fn(self.obs_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.c * x + &self.r_chol * z)
    }
}

/// Bitmask over sensor positions: bit `n` set means sensor `n` is included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetIndex(u32);

impl SubsetIndex {
    pub const MAX_SENSORS: usize = 31;

    pub fn new(bits: u32, n_sensors: usize) -> Result<Self> {
        if n_sensors > Self::MAX_SENSORS {
            return Err(Error::Config(format!(
                "at most {} sensors supported",
                Self::MAX_SENSORS
            )));
        }
        if u64::from(bits) >= 1u64 << n_sensors {
            return Err(Error::Domain(format!(
                "subset index {bits} out of range for {n_sensors} sensors"
            )));
        }
        Ok(Self(bits))
    }

    pub const fn empty() -> Self {
        Self(0)
    }

    pub fn full(n_sensors: usize) -> Self {
        Self(((1u64 << n_sensors) - 1) as u32)
    }

    pub fn singleton(n: usize) -> Self {
        Self(1 << n)
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(members: I) -> Self {
        Self(members.into_iter().fold(0, |acc, n| acc | (1 << n)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, n: usize) -> bool {
        n < 32 && self.0 >> n & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_full(self, n_sensors: usize) -> bool {
        self == Self::full(n_sensors)
    }

    pub fn is_superset_of(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, n: usize) {
        self.0 |= 1 << n;
    }

    /// Members in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |n| bits >> n & 1 == 1)
    }

    /// Every subset of `n_sensors` sensors, in index order.
    pub fn all(n_sensors: usize) -> impl Iterator<Item = Self> {
        (0..(1u64 << n_sensors)).map(|b| Self(b as u32))
    }
}

impl fmt::Display for SubsetIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.members().map(|n| (n + 1).to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

#[derive(Clone, Debug)]
pub struct SensorSuite {
    sensors: Vec<Sensor>,
    state_dim: usize,
}

impl SensorSuite {
    pub fn new(system: &LinearSystem, sensors: Vec<Sensor>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::Config("at least one sensor is required".into()));
        }
        if sensors.len() > SubsetIndex::MAX_SENSORS {
            return Err(Error::Config(format!(
                "at most {} sensors supported",
                SubsetIndex::MAX_SENSORS
            )));
        }
        for s in &sensors {
            if s.c.ncols() != system.dim() {
                return Err(Error::Dimension {
                    context: "sensor observation matrix columns",
                    expected: system.dim(),
                    got: s.c.ncols(),
                });
            }
        }
        Ok(Self {
            sensors,
            state_dim: system.dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }
    pub fn sensor(&self, n: usize) -> &Sensor {
        &self.sensors[n]
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn full(&self) -> SubsetIndex {
        SubsetIndex::full(self.len())
    }

    /// Row-stacked `C_ȷ` and block-diagonal `R_ȷ` in ascending sensor order.
    pub fn stack_subset(&self, subset: SubsetIndex) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if u64::from(subset.bits()) >= 1u64 << self.len() {
            return Err(Error::Config(format!(
                "subset {subset} references sensors beyond {}",
                self.len()
            )));
        }
        let members: Vec<&Sensor> = subset.members().map(|n| &self.sensors[n]).collect();
        let rows: usize = members.iter().map(|s| s.obs_dim()).sum();
        let mut c = DMatrix::zeros(rows, self.state_dim);
        let mut r0 = 0;
        for s in &members {
            c.view_mut((r0, 0), (s.obs_dim(), self.state_dim)).copy_from(&s.c);
            r0 += s.obs_dim();
        }
        let blocks: Vec<&DMatrix<f64>> = members.iter().map(|s| &s.r).collect();
        Ok((c, block_diag(&blocks)))
    }

    /// Stacks per-sensor observation vectors of `subset` in ascending order.
    pub fn stack_observations(&self, subset: SubsetIndex, all: &[DVector<f64>]) -> Result<DVector<f64>> {
        if all.len() != self.len() {
            return Err(Error::Dimension {
                context: "observation list",
                expected: self.len(),
                got: all.len(),
            });
        }
        let parts: Vec<f64> = subset
            .members()
            .flat_map(|n| all[n].iter().copied().collect::<Vec<_>>())
            .collect();
        Ok(DVector::from_vec(parts))
    }

    /// One observation per sensor, drawn in sensor order from `rng`.
    pub fn observe_all<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        self.sensors.iter().map(|s| s.observe(x, rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StabilizabilityPath {
    /// `Q ≻ 0` decides the question directly.
    PositiveDefiniteNoise,
    /// PBH rank test on `(F, Q^{1/2})` over eigenvalues with `|λ| ≥ 1`.
    Pbh { failing_eigenvalue: Option<Complex<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizabilityReport {
    pub stabilizable: bool,
    pub path: StabilizabilityPath,
}

pub fn check_stabilizability(system: &LinearSystem) -> StabilizabilityReport {
    if cholesky_pd(system.q()).is_some() {
        return StabilizabilityReport {
            stabilizable: true,
            path: StabilizabilityPath::PositiveDefiniteNoise,
        };
    }
    let m = system.dim();
    let b = system.q_sqrt().map(|v| Complex::new(v, 0.0));
    let fc = system.f().map(|v| Complex::new(v, 0.0));
    for lambda in system.f().clone().complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(m, 2 * m);
        let shifted = &fc - DMatrix::<Complex<f64>>::identity(m, m) * *lambda;
        pbh.view_mut((0, 0), (m, m)).copy_from(&shifted);
        pbh.view_mut((0, m), (m, m)).copy_from(&b);
        let sv = pbh.singular_values();
        let smax = sv.max().max(1.0);
        let rank = sv.iter().filter(|s| **s > TOL_RANK * smax).count();
        if rank < m {
            return StabilizabilityReport {
                stabilizable: false,
                path: StabilizabilityPath::Pbh {
                    failing_eigenvalue: Some(*lambda),
                },
            };
        }
    }
    StabilizabilityReport {
        stabilizable: true,
        path: StabilizabilityPath::Pbh {
            failing_eigenvalue: None,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Detectability {
    /// Witness walk (0-based sensor indices) with its Gramian's smallest singular value.
    Satisfied { walk: Vec<usize>, min_singular: f64 },
    Inconclusive,
}

impl Detectability {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Self::Satisfied { .. })
    }
}

/// `Σ_i (F^{i-1})ᵀ C_{n_i}ᵀ C_{n_i} F^{i-1}` for a walk.
pub fn walk_gramian(system: &LinearSystem, suite: &SensorSuite, walk: &[usize]) -> DMatrix<f64> {
    let m = system.dim();
    let mut gram = DMatrix::zeros(m, m);
    let mut fpow = DMatrix::identity(m, m);
    for &n in walk {
        let cf = suite.sensor(n).c() * &fpow;
        gram += cf.transpose() * &cf;
        fpow = system.f() * fpow;
    }
    gram
}

fn gramian_rank_ok(gram: &DMatrix<f64>) -> Option<f64> {
    let ev = linalg::eigenvalues_sym(gram);
    let (smin, smax) = (ev.min(), ev.max());
    (smin > TOL_RANK * smax.max(1.0)).then_some(smin)
}

struct WalkSearch<'a> {
    system: &'a LinearSystem,
    suite: &'a SensorSuite,
    support: Vec<Vec<usize>>,
    max_len: usize,
    budget: usize,
}

impl WalkSearch<'_> {
    fn children(&self, last: usize, covered: &[bool]) -> Vec<usize> {
        let mut next = self.support[last].clone();
        // uncovered nodes first, then ascending
        next.sort_by_key(|&j| (covered[j], j));
        next
    }

    fn dfs(
        &mut self,
        walk: &mut Vec<usize>,
        covered: &mut Vec<bool>,
        gram: &DMatrix<f64>,
        fpow: &DMatrix<f64>,
    ) -> Option<f64> {
        if self.budget == 0 {
            return None;
        }
        self.budget -= 1;
        let n = *walk.last().expect("non-empty walk");
        let cf = self.suite.sensor(n).c() * fpow;
        let gram = gram + cf.transpose() * &cf;
        if covered.iter().all(|c| *c) {
            if let Some(s) = gramian_rank_ok(&gram) {
                return Some(s);
            }
        }
        if walk.len() >= self.max_len {
            return None;
        }
        let fpow = self.system.f() * fpow;
        for j in self.children(n, covered) {
            let was = covered[j];
            covered[j] = true;
            walk.push(j);
            if let Some(s) = self.dfs(walk, covered, &gram, &fpow) {
                return Some(s);
            }
            walk.pop();
            covered[j] = was;
        }
        None
    }
}

/// Searches for a walk on the graph of positive entries of `mean_adj`
/// that covers every sensor and has an invertible observability Gramian.
///
/// Depth-first enumeration (bounded by an expansion budget) runs first,
/// then `trials` uniformly random walks. `max_walk_len` defaults to `2·N·M`.
pub fn check_weak_detectability<R: Rng + ?Sized>(
    system: &LinearSystem,
    suite: &SensorSuite,
    mean_adj: &DMatrix<f64>,
    max_walk_len: Option<usize>,
    trials: usize,
    rng: &mut R,
) -> Result<Detectability> {
    let n = suite.len();
    if mean_adj.shape() != (n, n) {
        return Err(Error::Dimension {
            context: "mean adjacency",
            expected: n,
            got: mean_adj.nrows(),
        });
    }
    let max_len = max_walk_len.unwrap_or(2 * n * system.dim()).max(1);
    let support: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| mean_adj[(i, j)] > 0.0).collect())
        .collect();
    let m = system.dim();
    let mut search = WalkSearch {
        system,
        suite,
        support,
        max_len,
        budget: 20_000,
    };
    for start in 0..n {
        let mut walk = vec![start];
        let mut covered = vec![false; n];
        covered[start] = true;
        if let Some(s) = search.dfs(
            &mut walk,
            &mut covered,
            &DMatrix::zeros(m, m),
            &DMatrix::identity(m, m),
        ) {
            return Ok(Detectability::Satisfied {
                walk,
                min_singular: s,
            });
        }
    }
    for _ in 0..trials {
        let mut walk = vec![rng.random_range(0..n)];
        let mut covered = vec![false; n];
        covered[walk[0]] = true;
        let mut gram = DMatrix::zeros(m, m);
        let mut fpow = DMatrix::identity(m, m);
        loop {
            let cur = *walk.last().unwrap();
            let cf = suite.sensor(cur).c() * &fpow;
            gram += cf.transpose() * &cf;
            if covered.iter().all(|c| *c) {
                if let Some(s) = gramian_rank_ok(&gram) {
                    return Ok(Detectability::Satisfied {
                        walk,
                        min_singular: s,
                    });
                }
            }
            let nbrs = &search.support[cur];
            if walk.len() >= max_len || nbrs.is_empty() {
                break;
            }
            let nxt = nbrs[rng.random_range(0..nbrs.len())];
            covered[nxt] = true;
            walk.push(nxt);
            fpow = system.f() * fpow;
        }
    }
    Ok(Detectability::Inconclusive)
}

/// Trajectory `x_0..x_K` with `x_0 ~ N(0, P̂_0)`.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    system: &LinearSystem,
    horizon: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let x0 = draw_initial_state(system, rng);
    simulate_trajectory_from(system, x0, horizon, rng)
}

pub fn draw_initial_state<R: Rng + ?Sized>(system: &LinearSystem, rng: &mut R) -> DVector<f64> {
    let z = standard_normal_vec(system.dim(), rng);
    sqrt_psd(system.initial_cov()) * z
}

pub fn simulate_trajectory_from<R: Rng + ?Sized>(
    system: &LinearSystem,
    x0: DVector<f64>,
    horizon: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(x0);
    for _ in 0..horizon {
        let next = propagate(system, out.last().unwrap(), rng);
        out.push(next);
    }
    out
}

/// One step of the signal dynamics.
pub fn propagate<R: Rng + ?Sized>(system: &LinearSystem, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let w = system.q_sqrt() * standard_normal_vec(system.dim(), rng);
    system.f() * x + w
}

fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Block-rotation dynamics scaled by `growth`, `Q = I`, unit-variance
/// coordinate sensors. Sensor `n` observes every coordinate `j ≡ n (mod N)`
/// (or coordinate `n mod M` when there are more sensors than states).
pub fn rotation_chain(state_dim: usize, n_sensors: usize, growth: f64) -> Result<(LinearSystem, SensorSuite)> {
    if state_dim == 0 || n_sensors == 0 {
        return Err(Error::Config("rotation_chain needs positive dimensions".into()));
    }
    let mut f = DMatrix::zeros(state_dim, state_dim);
    let mut i = 0;
    let mut block = 0;
    while i < state_dim {
        if i + 1 < state_dim {
            let th = 0.3 + 0.25 * block as f64;
            let (s, c) = th.sin_cos();
            f[(i, i)] = growth * c;
            f[(i, i + 1)] = -growth * s;
            f[(i + 1, i)] = growth * s;
            f[(i + 1, i + 1)] = growth * c;
            i += 2;
        } else {
            f[(i, i)] = growth;
            i += 1;
        }
        block += 1;
    }
    let system = LinearSystem::new(f, DMatrix::identity(state_dim, state_dim))?;
    let sensors = (0..n_sensors)
        .map(|n| {
            let coords: Vec<usize> = if state_dim >= n_sensors {
                (0..state_dim).filter(|j| j % n_sensors == n).collect()
            } else {
                vec![n % state_dim]
            };
            let mut c = DMatrix::zeros(coords.len(), state_dim);
            for (row, &j) in coords.iter().enumerate() {
                c[(row, j)] = 1.0;
            }
            Sensor::new(c, DMatrix::identity(coords.len(), coords.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let suite = SensorSuite::new(&system, sensors)?;
    Ok((system, suite))
}

/// Two-state, three-sensor desk-scale model: a slowly growing rotation seen
/// through `[1 0]`, `[0 1]` and `[1 1]` with noise variance 0.1.
pub fn triad() -> (LinearSystem, SensorSuite) {
    let (s, c) = 0.5f64.sin_cos();
    let f = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * 1.2;
    let system = LinearSystem::new(f, DMatrix::identity(2, 2)).expect("valid triad system");
    let r = DMatrix::from_element(1, 1, 0.1);
    let sensors = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        .iter()
        .map(|row| Sensor::new(DMatrix::from_row_slice(1, 2, row), r.clone()).expect("valid triad sensor"))
        .collect();
    let suite = SensorSuite::new(&system, sensors).expect("valid triad suite");
    (system, suite)
}
