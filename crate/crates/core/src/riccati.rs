//! Subset Riccati operators and the string calculus built on them.
//!
//! `f_ȷ(X) = F X Fᵀ + Q − F X C_ȷᵀ (C_ȷ X C_ȷᵀ + R_ȷ)⁻¹ C_ȷ X Fᵀ` is the
//! one-step predicted covariance when the observations of subset `ȷ` are
//! fused; `f_0` is the Lyapunov map and `f_{2^N−1}` the centralized map.
//! A [`RiccatiString`] records a finite composition of such maps applied to
//! an initial covariance.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::linalg::{cholesky_pd, symmetrize};
use crate::model::{LinearSystem, SensorSuite, SubsetIndex};
use crate::{Error, Result};

pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-12;
pub const DEFAULT_FIXED_POINT_MAX_ITER: usize = 100_000;

fn apply(
    system: &LinearSystem,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let f = system.f();
    let fxft = f * x * f.transpose();
    if c.nrows() == 0 {
        return Ok(symmetrize(&(fxft + system.q())));
    }
    let s = c * x * c.transpose() + r;
    let chol = cholesky_pd(&s)
        .ok_or_else(|| Error::Internal("innovation covariance is not positive definite".into()))?;
    let cross = f * x * c.transpose();
    let correction = &cross * chol.solve(&cross.transpose());
    Ok(symmetrize(&(fxft + system.q() - correction)))
}

fn check_cov(system: &LinearSystem, x: &DMatrix<f64>) -> Result<()> {
    if x.shape() != (system.dim(), system.dim()) {
        return Err(Error::Dimension {
            context: "covariance argument",
            expected: system.dim(),
            got: x.nrows(),
        });
    }
    Ok(())
}

/// Evaluates `f_ȷ(X)` with the stacked observation model of `subset`.
pub fn riccati_op(
    system: &LinearSystem,
    suite: &SensorSuite,
    subset: SubsetIndex,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_cov(system, x)?;
    let (c, r) = suite.stack_subset(subset)?;
    apply(system, &c, &r, x)
}

/// Evaluates the subset operator as a sum of per-sensor corrections.
///
/// Agrees with [`riccati_op`] exactly when the stacked innovation matrix
/// `C_ȷ X C_ȷᵀ + R_ȷ` is block diagonal across sensors (for example, sensors
/// reading disjoint coordinates and `X` block diagonal over them).
pub fn riccati_op_sum_form(
    system: &LinearSystem,
    suite: &SensorSuite,
    subset: SubsetIndex,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_cov(system, x)?;
    suite.stack_subset(subset)?;
    let f = system.f();
    let mut y = f * x * f.transpose() + system.q();
    for n in subset.members() {
        let s = suite.sensor(n);
        let inn = s.c() * x * s.c().transpose() + s.r();
        let chol = cholesky_pd(&inn)
            .ok_or_else(|| Error::Internal("innovation covariance is not positive definite".into()))?;
        let cross = f * x * s.c().transpose();
        y -= &cross * chol.solve(&cross.transpose());
    }
    Ok(symmetrize(&y))
}

/// Subset operators with the stacked `(C_ȷ, R_ȷ)` pairs cached.
#[derive(Debug)]
pub struct RiccatiOps {
    system: LinearSystem,
    suite: SensorSuite,
    stacks: Vec<OnceLock<(DMatrix<f64>, DMatrix<f64>)>>,
}

impl Clone for RiccatiOps {
    fn clone(&self) -> Self {
        Self::new(&self.system, &self.suite)
    }
}

impl RiccatiOps {
    const MAX_CACHED_SENSORS: usize = 16;

    pub fn new(system: &LinearSystem, suite: &SensorSuite) -> Self {
        let cached = if suite.len() <= Self::MAX_CACHED_SENSORS {
            1usize << suite.len()
        } else {
            0
        };
        Self {
            system: system.clone(),
            suite: suite.clone(),
            stacks: (0..cached).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }
    pub fn suite(&self) -> &SensorSuite {
        &self.suite
    }
    pub fn n_sensors(&self) -> usize {
        self.suite.len()
    }
    pub fn full(&self) -> SubsetIndex {
        self.suite.full()
    }

    /// Stacked `(C_ȷ, R_ȷ)`, cached for small networks.
    pub fn stacked(&self, subset: SubsetIndex) -> Result<Cow<'_, (DMatrix<f64>, DMatrix<f64>)>> {
        match self.stacks.get(subset.bits() as usize) {
            Some(cell) => match cell.get() {
                Some(v) => Ok(Cow::Borrowed(v)),
                None => {
                    let v = self.suite.stack_subset(subset)?;
                    Ok(Cow::Borrowed(cell.get_or_init(|| v)))
                }
            },
            None => Ok(Cow::Owned(self.suite.stack_subset(subset)?)),
        }
    }

    pub fn apply(&self, subset: SubsetIndex, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_cov(&self.system, x)?;
        let stacked = self.stacked(subset)?;
        apply(&self.system, &stacked.0, &stacked.1, x)
    }

    pub fn centralized_fixed_point(&self, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
        let full = self.full();
        let mut x = self.system.q().clone();
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let next = self.apply(full, &x)?;
            residual = (&next - &x).norm();
            if !residual.is_finite() {
                break;
            }
            if residual <= tol * (1.0 + x.norm()) {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::Divergence {
            iterations: max_iter,
            residual,
        })
    }
}

/// Fixed point of the centralized operator, iterating from `X = Q`.
pub fn centralized_fixed_point(
    system: &LinearSystem,
    suite: &SensorSuite,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    RiccatiOps::new(system, suite).centralized_fixed_point(tol, max_iter)
}

/// A finite composition `f_{ȷ_r} ∘ … ∘ f_{ȷ_1}` applied to `initial`.
///
/// `steps` is stored in application order: `steps[0]` is `ȷ_1`, the first
/// operator applied to the initial covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiString {
    steps: Vec<SubsetIndex>,
    initial: DMatrix<f64>,
}

impl RiccatiString {
    pub fn new(steps: Vec<SubsetIndex>, initial: DMatrix<f64>) -> Self {
        Self { steps, initial }
    }

    /// Builds from the written order `(ȷ_r, …, ȷ_1)`, outermost first.
    pub fn from_written(outer_first: &[SubsetIndex], initial: DMatrix<f64>) -> Self {
        Self {
            steps: outer_first.iter().rev().copied().collect(),
            initial,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
    pub fn steps(&self) -> &[SubsetIndex] {
        &self.steps
    }
    pub fn initial(&self) -> &DMatrix<f64> {
        &self.initial
    }

    /// Appends one more outer operator.
    pub fn then(mut self, subset: SubsetIndex) -> Self {
        self.steps.push(subset);
        self
    }

    /// Human-readable written order, e.g. `(f{1,2}, f{3}, P0)`.
    pub fn describe(&self) -> String {
        let mut parts: Vec<String> = self.steps.iter().rev().map(|s| format!("f{s}")).collect();
        parts.push("P0".into());
        format!("({})", parts.join(", "))
    }
}

pub fn evaluate_string(string: &RiccatiString, ops: &RiccatiOps) -> Result<DMatrix<f64>> {
    string
        .steps
        .iter()
        .try_fold(string.initial.clone(), |x, &s| ops.apply(s, &x))
}

/// Number of non-centralized operators in the string.
pub fn count_non_centralized(string: &RiccatiString, n_sensors: usize) -> usize {
    let full = SubsetIndex::full(n_sensors);
    string.steps.iter().filter(|s| **s != full).count()
}

/// Per-sensor, per-subset exponent bounds `q̄_n(ȷ)` and `q̲_n(ȷ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    n_sensors: usize,
    upper: Vec<Vec<f64>>,
    lower: Vec<Vec<f64>>,
}

impl WeightTable {
    /// `entry(n, ȷ)` yields `(q̄, q̲)` for `ȷ ≠ 2^N−1`; the full set costs
    /// nothing and sensors outside `ȷ` are forced to `∞`.
    pub fn from_fn<F>(n_sensors: usize, mut entry: F) -> Result<Self>
    where
        F: FnMut(usize, SubsetIndex) -> Result<(f64, f64)>,
    {
        let full = SubsetIndex::full(n_sensors);
        let mut upper = vec![Vec::with_capacity(1 << n_sensors); n_sensors];
        let mut lower = vec![Vec::with_capacity(1 << n_sensors); n_sensors];
        for n in 0..n_sensors {
            for s in SubsetIndex::all(n_sensors) {
                let (u, l) = if s == full {
                    (0.0, 0.0)
                } else if !s.contains(n) {
                    (f64::INFINITY, f64::INFINITY)
                } else {
                    entry(n, s)?
                };
                if u.is_nan() || l.is_nan() || u < 0.0 || l < 0.0 {
                    return Err(Error::Domain(format!(
                        "weight bounds must be nonnegative, got ({u}, {l}) for sensor {n}, subset {s}"
                    )));
                }
                upper[n].push(u);
                lower[n].push(l);
            }
        }
        Ok(Self {
            n_sensors,
            upper,
            lower,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }
    pub fn upper(&self, n: usize, s: SubsetIndex) -> f64 {
        self.upper[n][s.bits() as usize]
    }
    pub fn lower(&self, n: usize, s: SubsetIndex) -> f64 {
        self.lower[n][s.bits() as usize]
    }

    fn cost(&self, bound: Bound, n: usize, s: SubsetIndex) -> f64 {
        if s.is_full(self.n_sensors) {
            return 0.0;
        }
        match bound {
            Bound::Upper => self.upper(n, s),
            Bound::Lower => self.lower(n, s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    /// Weights built from `q̄` (the LD upper bound side).
    Upper,
    /// Weights built from `q̲` (the LD lower bound side).
    Lower,
}

/// Graph whose walks index the path minimization in the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGraph {
    neighbors: Vec<Vec<usize>>,
}

impl PathGraph {
    /// Edges are the positive entries of `adj`.
    pub fn from_matrix(adj: &DMatrix<f64>) -> Self {
        let n = adj.nrows();
        Self {
            neighbors: (0..n)
                .map(|j| (0..n).filter(|&i| adj[(i, j)] > 0.0 || adj[(j, i)] > 0.0).collect())
                .collect(),
        }
    }
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }
}

/// Min-plus path recursion: `dp[n]` is the cheapest admissible path ending at `n`.
fn extend_dp(
    dp: Option<&[f64]>,
    subset: SubsetIndex,
    table: &WeightTable,
    graph: &PathGraph,
    bound: Bound,
) -> Vec<f64> {
    (0..graph.len())
        .map(|n| {
            let prev = match dp {
                None => 0.0,
                Some(dp) => graph
                    .neighbors(n)
                    .iter()
                    .map(|&m| dp[m])
                    .fold(f64::INFINITY, f64::min),
            };
            prev + table.cost(bound, n, subset)
        })
        .collect()
}

fn dp_min(dp: &[f64]) -> f64 {
    dp.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Upper and lower weights `(w̄, w̲)` of a string; `(0, 0)` for length 0 and
/// `∞` when every admissible path has infinite cost.
pub fn string_weights(string: &RiccatiString, table: &WeightTable, graph: &PathGraph) -> (f64, f64) {
    if string.is_empty() {
        return (0.0, 0.0);
    }
    let weight = |bound| {
        let mut dp: Option<Vec<f64>> = None;
        for &s in string.steps() {
            dp = Some(extend_dp(dp.as_deref(), s, table, graph, bound));
        }
        dp_min(dp.as_deref().unwrap())
    };
    (weight(Bound::Upper), weight(Bound::Lower))
}

/// Limits for the bounded string enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchCaps {
    pub max_len: usize,
    /// Size of the per-step subset whitelist (full set first, then cheapest).
    pub max_subsets_per_step: usize,
    /// Expansion budget; exhausting it flags the result as capped.
    pub max_nodes: usize,
}

impl Default for SearchCaps {
    fn default() -> Self {
        Self {
            max_len: 4,
            max_subsets_per_step: 64,
            max_nodes: 200_000,
        }
    }
}

/// Best weight found by the bounded search, with its witness string.
///
/// `value` is an upper bound on the true infimum (longer strings may do
/// better); it is `∞` when no enumerated string satisfied the target.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub value: f64,
    pub witness: Option<RiccatiString>,
    pub witness_value: Option<DMatrix<f64>>,
    pub capped: bool,
    pub expanded: usize,
}

struct Node {
    weight: f64,
    seq: usize,
    steps: Vec<SubsetIndex>,
    value: DMatrix<f64>,
    dp: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // min-heap on (weight, length, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| other.steps.len().cmp(&self.steps.len()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn whitelist(table: &WeightTable, bound: Bound, cap: usize) -> Vec<SubsetIndex> {
    let n = table.n_sensors();
    let full = SubsetIndex::full(n);
    let mut scored: Vec<(f64, SubsetIndex)> = SubsetIndex::all(n)
        .filter(|s| *s != full)
        .map(|s| ((0..n).map(|i| table.cost(bound, i, s)).fold(f64::INFINITY, f64::min), s))
        .filter(|(c, _)| c.is_finite())
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    std::iter::once(full)
        .chain(scored.into_iter().map(|(_, s)| s))
        .take(cap.max(1))
        .collect()
}

/// Best-first search for the lightest string from `initial` whose value
/// satisfies `target`. Weights never decrease along extensions, so the
/// first accepted node is optimal among strings within the caps.
pub fn search_strings<P>(
    ops: &RiccatiOps,
    initial: &DMatrix<f64>,
    table: &WeightTable,
    graph: &PathGraph,
    bound: Bound,
    caps: &SearchCaps,
    mut target: P,
) -> Result<SearchOutcome>
where
    P: FnMut(&DMatrix<f64>) -> bool,
{
    if graph.len() != ops.n_sensors() || table.n_sensors() != ops.n_sensors() {
        return Err(Error::Dimension {
            context: "weight table / path graph sensor count",
            expected: ops.n_sensors(),
            got: graph.len(),
        });
    }
    let allowed = whitelist(table, bound, caps.max_subsets_per_step);
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node {
        weight: 0.0,
        seq,
        steps: Vec::new(),
        value: initial.clone(),
        dp: Vec::new(),
    });
    let mut expanded = 0usize;
    while let Some(node) = heap.pop() {
        if target(&node.value) {
            let witness = RiccatiString::new(node.steps, initial.clone());
            return Ok(SearchOutcome {
                value: node.weight,
                witness: Some(witness),
                witness_value: Some(node.value),
                capped: false,
                expanded,
            });
        }
        if node.steps.len() >= caps.max_len {
            continue;
        }
        if expanded >= caps.max_nodes {
            return Ok(SearchOutcome {
                value: f64::INFINITY,
                witness: None,
                witness_value: None,
                capped: true,
                expanded,
            });
        }
        expanded += 1;
        let scale = node.value.norm().max(1.0);
        for &s in &allowed {
            let dp = extend_dp(
                (!node.steps.is_empty()).then_some(node.dp.as_slice()),
                s,
                table,
                graph,
                bound,
            );
            let weight = dp_min(&dp);
            if !weight.is_finite() {
                continue;
            }
            let value = ops.apply(s, &node.value)?;
            // A step that moves nothing and costs nothing cannot help.
            let stalled = (&value - &node.value).norm() <= 1e-13 * scale
                && !node.steps.is_empty()
                && dp.iter().zip(&node.dp).all(|(a, b)| a >= b);
            if stalled {
                continue;
            }
            let mut steps = node.steps.clone();
            steps.push(s);
            seq += 1;
            heap.push(Node {
                weight,
                seq,
                steps,
                value,
                dp,
            });
        }
    }
    // Every string within the caps was examined and none hit the target.
    Ok(SearchOutcome {
        value: f64::INFINITY,
        witness: None,
        witness_value: None,
        capped: true,
        expanded,
    })
}

/// Bounded approximation of the upper and lower rate functions at `x`.
#[derive(Clone, Debug)]
pub struct RateEstimate {
    pub upper: SearchOutcome,
    pub lower: SearchOutcome,
}

impl RateEstimate {
    pub fn capped(&self) -> bool {
        self.upper.capped || self.lower.capped
    }
}

/// Approximates `Ī(X)` and `I̲(X)` by searching strings started at `p_star`
/// whose value lies within `target_tol` (Frobenius) of `x`.
pub fn rate_function(
    x: &DMatrix<f64>,
    target_tol: f64,
    caps: &SearchCaps,
    table: &WeightTable,
    graph: &PathGraph,
    ops: &RiccatiOps,
    p_star: &DMatrix<f64>,
) -> Result<RateEstimate> {
    let hit = |v: &DMatrix<f64>| (v - x).norm() <= target_tol;
    Ok(RateEstimate {
        upper: search_strings(ops, p_star, table, graph, Bound::Upper, caps, hit)?,
        lower: search_strings(ops, p_star, table, graph, Bound::Lower, caps, hit)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_psd, lambda_min};
    use crate::model::{Sensor, SensorSuite};

    fn scalar_model(f: f64, q: f64, cs: &[(f64, f64)]) -> (LinearSystem, SensorSuite) {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, f), DMatrix::from_element(1, 1, q)).unwrap();
        let sensors = cs
            .iter()
            .map(|&(c, r)| Sensor::new(DMatrix::from_element(1, 1, c), DMatrix::from_element(1, 1, r)).unwrap())
            .collect();
        let suite = SensorSuite::new(&sys, sensors).unwrap();
        (sys, suite)
    }

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn scalar_operator_values() {
        let (sys, suite) = scalar_model(1.0, 1.0, &[(1.0, 1.0)]);
        let one = SubsetIndex::singleton(0);
        assert_eq!(riccati_op(&sys, &suite, one, &s(0.0)).unwrap()[(0, 0)], 1.0);
        // (2X + 1)/(X + 1) at X = 1
        assert!((riccati_op(&sys, &suite, one, &s(1.0)).unwrap()[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn empty_subset_is_lyapunov() {
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5).unwrap();
        let sn = Sensor::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let suite = SensorSuite::new(&sys, vec![sn]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let y = riccati_op(&sys, &suite, SubsetIndex::empty(), &x).unwrap();
        assert!((y - (&x + sys.q())).norm() < 1e-15);
    }

    #[test]
    fn sum_form_two_identical_sensors() {
        // F X F' + Q = 2, each sensor removes 1/2
        let (sys, suite) = scalar_model(1.0, 1.0, &[(1.0, 1.0), (1.0, 1.0)]);
        let y = riccati_op_sum_form(&sys, &suite, SubsetIndex::full(2), &s(1.0)).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-15);
        let single = SubsetIndex::singleton(1);
        assert_eq!(
            riccati_op_sum_form(&sys, &suite, single, &s(0.7)).unwrap(),
            riccati_op(&sys, &suite, single, &s(0.7)).unwrap()
        );
    }

    #[test]
    fn golden_ratio_fixed_point() {
        let (sys, suite) = scalar_model(1.0, 1.0, &[(1.0, 1.0)]);
        let p = centralized_fixed_point(&sys, &suite, DEFAULT_FIXED_POINT_TOL, DEFAULT_FIXED_POINT_MAX_ITER).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p[(0, 0)] - phi).abs() < 1e-9);
    }

    #[test]
    fn no_dynamics_fixed_point_is_q() {
        let (sys, suite) = scalar_model(0.0, 2.5, &[(1.0, 1.0)]);
        let p = centralized_fixed_point(&sys, &suite, DEFAULT_FIXED_POINT_TOL, 10).unwrap();
        assert_eq!(p[(0, 0)], 2.5);
    }

    #[test]
    fn fixed_point_monotone_in_noise() {
        let f = DMatrix::from_row_slice(2, 2, &[1.1, 0.2, 0.0, 0.9]);
        let sys = LinearSystem::new(f, DMatrix::identity(2, 2)).unwrap();
        let mk = |r: f64| {
            let sn = Sensor::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * r).unwrap();
            let suite = SensorSuite::new(&sys, vec![sn]).unwrap();
            centralized_fixed_point(&sys, &suite, 1e-12, 100_000).unwrap()
        };
        let (p1, p10) = (mk(1.0), mk(10.0));
        assert!(lambda_min(&(p10 - p1)) >= -1e-10);
    }

    #[test]
    fn unobservable_unstable_model_diverges() {
        let (sys, suite) = scalar_model(2.0, 1.0, &[(0.0, 1.0)]);
        let err = centralized_fixed_point(&sys, &suite, 1e-12, 200).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn string_evaluation() {
        let (sys, suite) = scalar_model(1.0, 1.0, &[(1.0, 1.0)]);
        let ops = RiccatiOps::new(&sys, &suite);
        let p = ops.centralized_fixed_point(1e-12, 10_000).unwrap();
        let empty = RiccatiString::new(vec![], p.clone());
        assert_eq!(evaluate_string(&empty, &ops).unwrap(), p);
        let once = RiccatiString::new(vec![ops.full()], p.clone());
        assert!((evaluate_string(&once, &ops).unwrap() - &p).norm() < 1e-11);
        let lyap = RiccatiString::new(vec![SubsetIndex::empty(); 2], s(0.0));
        assert_eq!(evaluate_string(&lyap, &ops).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn pi_counts() {
        let n = 3;
        let full = SubsetIndex::full(n);
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(count_non_centralized(&RiccatiString::new(vec![full; 5], zero.clone()), n), 0);
        let written = [
            SubsetIndex::from_members([0]),
            full,
            SubsetIndex::from_members([0, 1]),
            full,
            SubsetIndex::from_members([1]),
        ];
        assert_eq!(count_non_centralized(&RiccatiString::from_written(&written, zero.clone()), n), 3);
        assert_eq!(count_non_centralized(&RiccatiString::new(vec![], zero), n), 0);
    }

    fn const_table(n: usize, up: &[f64], lo: &[f64]) -> WeightTable {
        WeightTable::from_fn(n, |i, _| Ok((up[i], lo[i]))).unwrap()
    }

    #[test]
    fn weights_of_trivial_strings() {
        let table = const_table(2, &[1.0, 3.0], &[2.0, 4.0]);
        let graph = PathGraph::from_matrix(&DMatrix::from_element(2, 2, 1.0));
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(string_weights(&RiccatiString::new(vec![], zero.clone()), &table, &graph), (0.0, 0.0));
        let full = RiccatiString::new(vec![SubsetIndex::full(2); 4], zero);
        assert_eq!(string_weights(&full, &table, &graph), (0.0, 0.0));
    }

    #[test]
    fn weights_match_exhaustive_paths() {
        let table = const_table(2, &[1.0, 3.0], &[1.5, 3.5]);
        let both = SubsetIndex::from_members([0, 1]);
        // Both subsets used contain both sensors so every cost is finite.
        let g_full = DMatrix::from_element(2, 2, 1.0);
        let mut g_path = DMatrix::identity(2, 2);
        g_path[(0, 1)] = 1.0;
        g_path[(1, 0)] = 1.0;
        let steps = vec![both, both];
        let string = RiccatiString::new(steps.clone(), DMatrix::zeros(1, 1));
        for g in [g_full, g_path] {
            let graph = PathGraph::from_matrix(&g);
            let mut best = f64::INFINITY;
            for a in 0..2 {
                for b in 0..2 {
                    if g[(a, b)] > 0.0 {
                        best = best.min(table.upper(a, both) + table.upper(b, both));
                    }
                }
            }
            assert_eq!(string_weights(&string, &table, &graph).0, best);
        }
    }

    #[test]
    fn weights_infinite_without_admissible_path() {
        // Sensor 0 only has cost for {0}, sensor 1 only for {1}; without
        // edges between them, ({0},{1}) has no finite path.
        let table = const_table(2, &[1.0, 1.0], &[1.0, 1.0]);
        let graph = PathGraph::from_matrix(&DMatrix::identity(2, 2));
        let string = RiccatiString::new(
            vec![SubsetIndex::singleton(0), SubsetIndex::singleton(1)],
            DMatrix::zeros(1, 1),
        );
        assert_eq!(string_weights(&string, &table, &graph), (f64::INFINITY, f64::INFINITY));
    }

    #[test]
    fn rate_function_basics() {
        let (sys, suite) = scalar_model(1.1, 1.0, &[(1.0, 1.0), (1.0, 2.0)]);
        let ops = RiccatiOps::new(&sys, &suite);
        let p = ops.centralized_fixed_point(1e-12, 100_000).unwrap();
        let table = const_table(2, &[0.5, 0.7], &[1.0, 1.4]);
        let graph = PathGraph::from_matrix(&DMatrix::from_element(2, 2, 1.0));
        let caps = SearchCaps {
            max_len: 3,
            ..SearchCaps::default()
        };

        let at_p = rate_function(&p, 1e-9, &caps, &table, &graph, &ops, &p).unwrap();
        assert_eq!((at_p.upper.value, at_p.lower.value), (0.0, 0.0));
        assert!(!at_p.capped());

        let j = SubsetIndex::singleton(1);
        let x = ops.apply(j, &p).unwrap();
        let est = rate_function(&x, 1e-9, &caps, &table, &graph, &ops, &p).unwrap();
        assert!(est.upper.value <= table.upper(1, j) + 1e-15);
        assert!(est.lower.value >= est.upper.value);

        let far = s(1e6);
        let est = rate_function(&far, 1e-3, &caps, &table, &graph, &ops, &p).unwrap();
        assert!(est.upper.value.is_infinite() && est.capped());
    }

    #[test]
    fn operators_preserve_psd() {
        let (sys, suite) = crate::model::triad();
        let ops = RiccatiOps::new(&sys, &suite);
        let mut x = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 0.5]);
        for k in 0..200 {
            x = ops.apply(SubsetIndex::new((k % 8) as u32, 3).unwrap(), &x).unwrap();
            assert!(is_psd(&x));
            assert_eq!(x, x.transpose());
        }
    }
}
