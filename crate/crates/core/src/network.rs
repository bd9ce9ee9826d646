//! Communication graph, random matchings and hitting-time constants.
//!
//! Nodes are 0-based internally; the text graph format is 1-based.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;

use crate::model::SubsetIndex;
use crate::riccati::WeightTable;
use crate::seed::rng_from_seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GossipTopology {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: DMatrix<f64>,
}

impl GossipTopology {
    /// Undirected topology; self-loops in `edges` are ignored since every
    /// node can always talk to itself.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("topology needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Config(format!(
                    "edge ({}, {}) references a node beyond {n}",
                    u + 1,
                    v + 1
                )));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut adjacency = DMatrix::identity(n, n);
        for &(u, v) in &edges {
            adjacency[(u, v)] = 1.0;
            adjacency[(v, u)] = 1.0;
        }
        Ok(Self { n, edges, adjacency })
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Self::new(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        Self::new(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self> {
        let mut edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::new(n, &edges)
    }

    /// Parses `N` on the first line followed by one `u v` pair per line
    /// (1-based). Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line_no, first) = lines
            .next()
            .ok_or_else(|| Error::Config("graph file is empty".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Config(format!("line {line_no}: expected node count, got {first:?}")))?;
        let mut edges = Vec::new();
        for (line_no, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<usize> {
                let v: usize = s
                    .parse()
                    .map_err(|_| Error::Config(format!("line {line_no}: bad node id {s:?}")))?;
                if v == 0 || v > n {
                    return Err(Error::Config(format!("line {line_no}: node {v} outside 1..={n}")));
                }
                Ok(v - 1)
            };
            match parts.as_slice() {
                [u, v] => edges.push((parse(u)?, parse(v)?)),
                _ => return Err(Error::Config(format!("line {line_no}: expected \"u v\", got {line:?}"))),
            }
        }
        Self::new(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    /// Edges between distinct nodes with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
    /// Maximal adjacency `𝒜`: symmetric 0/1 with unit diagonal.
    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }
    pub fn has_link(&self, u: usize, v: usize) -> bool {
        self.adjacency[(u, v)] > 0.0
    }

    /// Transition matrix of one observation hop in the dissemination
    /// protocol: the average of the single-edge swaps `E^{nl}` over `ℰ`.
    pub fn dissemination_chain(&self) -> MeanAdjacency {
        let n = self.n;
        if self.edges.is_empty() {
            return MeanAdjacency(DMatrix::identity(n, n));
        }
        let w = 1.0 / self.edges.len() as f64;
        let mut a = DMatrix::zeros(n, n);
        for &(u, v) in &self.edges {
            for m in 0..n {
                if m != u && m != v {
                    a[(m, m)] += w;
                }
            }
            a[(u, v)] += w;
            a[(v, u)] += w;
        }
        MeanAdjacency(a)
    }
}

/// A symmetric permutation: every node is paired with exactly one node,
/// possibly itself.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matching {
    partner: Vec<usize>,
}

impl Matching {
    pub fn identity(n: usize) -> Self {
        Self {
            partner: (0..n).collect(),
        }
    }

    /// The single-edge swap `E^{nl}`.
    pub fn single_edge(n: usize, u: usize, v: usize) -> Self {
        let mut m = Self::identity(n);
        m.partner[u] = v;
        m.partner[v] = u;
        m
    }

    /// Validates that `partner` is an involution.
    pub fn from_partners(partner: Vec<usize>) -> Result<Self> {
        let n = partner.len();
        for (i, &p) in partner.iter().enumerate() {
            if p >= n || partner[p] != i {
                return Err(Error::Contract(format!(
                    "partner array is not a matching at node {}",
                    i + 1
                )));
            }
        }
        Ok(Self { partner })
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }
    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }
    pub fn partner(&self, n: usize) -> usize {
        self.partner[n]
    }
    pub fn partners(&self) -> &[usize] {
        &self.partner
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, &p) in self.partner.iter().enumerate() {
            a[(i, p)] = 1.0;
        }
        a
    }

    pub fn fits(&self, topology: &GossipTopology) -> bool {
        self.len() == topology.len()
            && self
                .partner
                .iter()
                .enumerate()
                .all(|(i, &p)| topology.has_link(i, p))
    }
}

/// Distribution `𝒟` over matchings.
#[derive(Clone, Debug)]
pub struct MatchingDistribution {
    support: Vec<Matching>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl MatchingDistribution {
    pub fn new(topology: &GossipTopology, support: Vec<Matching>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Config("matching distribution has empty support".into()));
        }
        if support.len() != probs.len() {
            return Err(Error::Dimension {
                context: "matching probabilities",
                expected: support.len(),
                got: probs.len(),
            });
        }
        for m in &support {
            if !m.fits(topology) {
                return Err(Error::Config(format!(
                    "matching {:?} uses a link outside the topology",
                    m.partners().iter().map(|p| p + 1).collect::<Vec<_>>()
                )));
            }
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("matching probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("matching probabilities sum to {total}, not 1")));
        }
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| Error::Config(format!("matching probabilities: {e}")))?;
        Ok(Self {
            support,
            probs,
            sampler,
        })
    }

    pub fn uniform(topology: &GossipTopology, support: Vec<Matching>) -> Result<Self> {
        let k = support.len().max(1);
        Self::new(topology, support, vec![1.0 / k as f64; k])
    }

    /// Uniform over the distinct maximal matchings found by 256 seeded
    /// randomized greedy passes over the edge list.
    pub fn greedy_maximal(topology: &GossipTopology, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut found = BTreeSet::new();
        let mut edges = topology.edges().to_vec();
        for _ in 0..256 {
            edges.shuffle(&mut rng);
            let mut partner: Vec<usize> = (0..topology.len()).collect();
            for &(u, v) in &edges {
                if partner[u] == u && partner[v] == v {
                    partner[u] = v;
                    partner[v] = u;
                }
            }
            found.insert(Matching { partner });
        }
        Self::uniform(topology, found.into_iter().collect())
    }

    pub fn support(&self) -> &[Matching] {
        &self.support
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Matching {
        &self.support[self.sampler.sample(rng)]
    }

    pub fn mean_adjacency(&self) -> MeanAdjacency {
        let n = self.support[0].len();
        let mut a = DMatrix::zeros(n, n);
        for (m, p) in self.support.iter().zip(&self.probs) {
            for (i, &j) in m.partners().iter().enumerate() {
                a[(i, j)] += p;
            }
        }
        MeanAdjacency(a)
    }
}

pub fn sample_matching<'a, R: Rng + ?Sized>(dist: &'a MatchingDistribution, rng: &mut R) -> &'a Matching {
    dist.sample(rng)
}

pub fn mean_adjacency(dist: &MatchingDistribution) -> MeanAdjacency {
    dist.mean_adjacency()
}

/// A symmetric doubly stochastic matrix, used as a Markov transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanAdjacency(DMatrix<f64>);

impl MeanAdjacency {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::Config("mean adjacency must be square and non-empty".into()));
        }
        if m.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(Error::Config("mean adjacency entries must lie in [0, 1]".into()));
        }
        for i in 0..n {
            let (r, c) = (m.row(i).sum(), m.column(i).sum());
            if (r - 1.0).abs() > 1e-12 || (c - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("row/column {} does not sum to 1", i + 1)));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainReport {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// Period of the class containing node 0 (1 when aperiodic).
    pub period: usize,
    /// Strongly connected components of the positive-entry digraph.
    pub components: Vec<Vec<usize>>,
}

impl ChainReport {
    pub fn ok(&self) -> bool {
        self.irreducible && self.aperiodic
    }
}

fn reachable(adj: &DMatrix<f64>, start: usize, transpose: bool) -> Vec<bool> {
    let n = adj.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let w = if transpose { adj[(v, u)] } else { adj[(u, v)] };
            if w > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Irreducibility via strong connectivity, aperiodicity via the gcd of
/// BFS level differences along edges.
pub fn check_irreducible_aperiodic(abar: &MeanAdjacency) -> ChainReport {
    let a = abar.matrix();
    let n = a.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let fwd = reachable(a, s, false);
        let bwd = reachable(a, s, true);
        let members: Vec<usize> = (0..n).filter(|&v| fwd[v] && bwd[v]).collect();
        for &v in &members {
            comp[v] = components.len();
        }
        components.push(members);
    }
    let irreducible = components.len() == 1;

    let class0 = &components[comp[0]];
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0]);
    let mut period = 0;
    while let Some(u) = queue.pop_front() {
        for &v in class0 {
            if a[(u, v)] > 0.0 {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    period = gcd(period, (level[u] + 1).abs_diff(level[v]));
                }
            }
        }
    }
    let period = if period == 0 { usize::MAX } else { period };
    ChainReport {
        irreducible,
        aperiodic: period == 1,
        period,
        components,
    }
}

/// `tails[k][i] = P(T_i > k)` for hitting `target`, `k = 0..=k_max`.
pub fn hitting_tail(chain: &MeanAdjacency, target: usize, k_max: usize) -> Result<Vec<Vec<f64>>> {
    let a = chain.matrix();
    let n = a.nrows();
    if target >= n {
        return Err(Error::Domain(format!("target {} outside the chain", target + 1)));
    }
    if !check_irreducible_aperiodic(chain).irreducible {
        return Err(Error::Domain("hitting times need an irreducible chain".into()));
    }
    let mut tails = Vec::with_capacity(k_max + 1);
    let mut cur: Vec<f64> = (0..n).map(|i| if i == target { 0.0 } else { 1.0 }).collect();
    tails.push(cur.clone());
    for _ in 0..k_max {
        cur = (0..n)
            .map(|i| {
                if i == target {
                    0.0
                } else {
                    (0..n).filter(|&j| j != target).map(|j| a[(i, j)] * cur[j]).sum()
                }
            })
            .collect();
        tails.push(cur.clone());
    }
    Ok(tails)
}

/// Geometric hitting-time constants: `P(T_i > kL)` lies in `[β^k, α^k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingConstants {
    pub alpha: f64,
    pub beta: f64,
    pub l: usize,
}

/// `α` / `β` are the max / min of `P(T_i > L)` over all targets and starts
/// `i ≠ target`.
pub fn hitting_constants(chain: &MeanAdjacency, l: usize) -> Result<HittingConstants> {
    if l == 0 {
        return Err(Error::Domain("L must be at least 1".into()));
    }
    let n = chain.len();
    if n < 2 {
        return Err(Error::Domain("hitting constants need at least two nodes".into()));
    }
    if !check_irreducible_aperiodic(chain).irreducible {
        return Err(Error::Domain("hitting constants need an irreducible chain".into()));
    }
    let (mut alpha, mut beta) = (0.0f64, 1.0f64);
    for target in 0..n {
        let tails = hitting_tail(chain, target, l)?;
        for (i, &t) in tails[l].iter().enumerate() {
            if i != target {
                alpha = alpha.max(t);
                beta = beta.min(t);
            }
        }
    }
    if alpha >= 1.0 {
        return Err(Error::Domain(format!(
            "alpha = {alpha} at L = {l}; choose a larger L so that alpha < 1"
        )));
    }
    Ok(HittingConstants { alpha, beta, l })
}

/// Smallest `L ≤ 10·N` with `α < 1`.
pub fn default_hitting_constants(chain: &MeanAdjacency) -> Result<HittingConstants> {
    let max_l = 10 * chain.len();
    let mut last = None;
    for l in 1..=max_l {
        match hitting_constants(chain, l) {
            Ok(c) => return Ok(c),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Domain("no admissible L".into())))
}

/// Exponent bounds `q̄_n(ȷ)` (None for the full set, where it does not
/// apply) and `q̲_n(ȷ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentBounds {
    pub upper: Option<f64>,
    pub lower: f64,
}

/// `q̄ = −ln α / L` and `q̲ = (N − m)(−ln β) / L` with `m = |ȷ|`; both are
/// `∞` when `sensor ∉ ȷ`.
pub fn q_exponent_bounds(
    consts: &HittingConstants,
    n_sensors: usize,
    sensor: usize,
    subset: SubsetIndex,
) -> Result<ExponentBounds> {
    let HittingConstants { alpha, beta, l } = *consts;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(beta > 0.0 && beta <= alpha) {
        return Err(Error::Domain(format!("beta must lie in (0, alpha], got {beta}")));
    }
    if l == 0 {
        return Err(Error::Domain("L must be positive".into()));
    }
    let m = subset.len();
    if m == 0 || m > n_sensors || sensor >= n_sensors {
        return Err(Error::Domain(format!("subset {subset} / sensor {} out of range", sensor + 1)));
    }
    if subset.is_full(n_sensors) {
        return Ok(ExponentBounds {
            upper: None,
            lower: 0.0,
        });
    }
    if !subset.contains(sensor) {
        return Ok(ExponentBounds {
            upper: Some(f64::INFINITY),
            lower: f64::INFINITY,
        });
    }
    let l = l as f64;
    Ok(ExponentBounds {
        upper: Some(-alpha.ln() / l),
        lower: (n_sensors - m) as f64 * (-beta.ln()) / l,
    })
}

/// Weight table built from the hitting constants of the dissemination chain.
pub fn weight_table(consts: &HittingConstants, n_sensors: usize) -> Result<WeightTable> {
    WeightTable::from_fn(n_sensors, |n, s| {
        let b = q_exponent_bounds(consts, n_sensors, n, s)?;
        Ok((b.upper.unwrap_or(0.0), b.lower))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn two_node_uniform() -> MeanAdjacency {
        MeanAdjacency::new(DMatrix::from_element(2, 2, 0.5)).unwrap()
    }

    #[test]
    fn topology_adjacency_has_self_loops() {
        let t = GossipTopology::path(3).unwrap();
        let a = t.adjacency();
        assert!((0..3).all(|i| a[(i, i)] == 1.0));
        assert_eq!(a[(0, 2)], 0.0);
        assert_eq!(a, &a.transpose());
        assert_eq!(t.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn parse_graph_file() {
        let t = GossipTopology::parse("# ring\n3\n1 2\n2 3\n\n3 1\n").unwrap();
        assert_eq!(t, GossipTopology::ring(3).unwrap());
        assert!(GossipTopology::parse("2\n1 3\n").is_err());
        assert!(GossipTopology::parse("x\n").is_err());
        assert!(GossipTopology::parse("3\n1 2 3\n").is_err());
    }

    #[test]
    fn identity_support_always_identity() {
        let t = GossipTopology::complete(3).unwrap();
        let d = MatchingDistribution::new(&t, vec![Matching::identity(3)], vec![1.0]).unwrap();
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), &Matching::identity(3));
        }
        assert_eq!(d.mean_adjacency().matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn swap_frequency_binomial() {
        let t = GossipTopology::complete(2).unwrap();
        let d = MatchingDistribution::new(&t, vec![Matching::identity(2), Matching::single_edge(2, 0, 1)], vec![0.5, 0.5])
            .unwrap();
        let mut rng = rng_from_seed(1);
        let hits = (0..10_000).filter(|_| d.sample(&mut rng).partner(0) == 1).count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.02);
        assert_eq!(d.mean_adjacency().matrix(), &DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn matching_outside_topology_rejected() {
        let t = GossipTopology::path(3).unwrap();
        let bad = Matching::single_edge(3, 0, 2);
        assert!(MatchingDistribution::new(&t, vec![bad], vec![1.0]).is_err());
        assert!(Matching::from_partners(vec![1, 2, 0]).is_err());
        assert!(MatchingDistribution::new(&t, vec![], vec![]).is_err());
        assert!(MatchingDistribution::new(&t, vec![Matching::identity(3)], vec![0.9]).is_err());
    }

    #[test]
    fn triangle_mean_adjacency_by_summation() {
        let t = GossipTopology::complete(3).unwrap();
        let support = vec![
            Matching::single_edge(3, 0, 1),
            Matching::single_edge(3, 0, 2),
            Matching::single_edge(3, 1, 2),
        ];
        let d = MatchingDistribution::uniform(&t, support.clone()).unwrap();
        let mut oracle = DMatrix::zeros(3, 3);
        for m in &support {
            oracle += m.to_matrix() / 3.0;
        }
        assert!((d.mean_adjacency().matrix() - oracle).amax() < 1e-15);
        assert!((d.mean_adjacency().matrix() - DMatrix::from_element(3, 3, 1.0 / 3.0)).amax() < 1e-15);
    }

    #[test]
    fn greedy_maximal_on_triangle_and_path() {
        let t = GossipTopology::complete(3).unwrap();
        let d = MatchingDistribution::greedy_maximal(&t, 5).unwrap();
        assert_eq!(d.support().len(), 3);
        let t = GossipTopology::path(3).unwrap();
        let d = MatchingDistribution::greedy_maximal(&t, 5).unwrap();
        assert_eq!(d.support().len(), 2);
        assert!(check_irreducible_aperiodic(&d.mean_adjacency()).ok());
    }

    #[test]
    fn chain_checks() {
        let r = check_irreducible_aperiodic(&MeanAdjacency::new(DMatrix::identity(2, 2)).unwrap());
        assert!(!r.irreducible && !r.ok());
        assert_eq!(r.components.len(), 2);
        assert!(check_irreducible_aperiodic(&two_node_uniform()).ok());
        let flip = MeanAdjacency::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let r = check_irreducible_aperiodic(&flip);
        assert!(r.irreducible && !r.aperiodic);
        assert_eq!(r.period, 2);
    }

    #[test]
    fn geometric_tail_two_states() {
        let tails = hitting_tail(&two_node_uniform(), 1, 10).unwrap();
        for (k, t) in tails.iter().enumerate() {
            assert!((t[0] - 0.5f64.powi(k as i32)).abs() < 1e-15);
            assert_eq!(t[1], 0.0);
        }
    }

    #[test]
    fn constants_two_states() {
        let c = hitting_constants(&two_node_uniform(), 1).unwrap();
        assert_eq!((c.alpha, c.beta), (0.5, 0.5));
        let c = hitting_constants(&two_node_uniform(), 3).unwrap();
        assert!((c.alpha - 0.125).abs() < 1e-15 && (c.beta - 0.125).abs() < 1e-15);
        let reducible = MeanAdjacency::new(DMatrix::identity(2, 2)).unwrap();
        assert!(hitting_constants(&reducible, 1).is_err());
    }

    #[test]
    fn path_needs_longer_l() {
        // From node 3 the walker cannot reach node 1 in one hop.
        let chain = GossipTopology::path(3).unwrap().dissemination_chain();
        assert!(hitting_constants(&chain, 1).is_err());
        let c = default_hitting_constants(&chain).unwrap();
        assert_eq!(c.l, 2);
        assert!((c.alpha - 0.75).abs() < 1e-15);
        assert!((c.beta - 0.25).abs() < 1e-15);
    }

    #[test]
    fn exponent_bound_arithmetic() {
        let c = HittingConstants {
            alpha: 0.5,
            beta: 0.25,
            l: 2,
        };
        let b = q_exponent_bounds(&c, 3, 0, SubsetIndex::singleton(0)).unwrap();
        assert!((b.upper.unwrap() - 2f64.ln() / 2.0).abs() < 1e-15);
        assert!((b.lower - 4f64.ln()).abs() < 1e-15);
        let full = q_exponent_bounds(&c, 3, 0, SubsetIndex::full(3)).unwrap();
        assert_eq!(full, ExponentBounds { upper: None, lower: 0.0 });
        let outside = q_exponent_bounds(&c, 3, 2, SubsetIndex::singleton(0)).unwrap();
        assert_eq!(outside.upper, Some(f64::INFINITY));
        let bad = HittingConstants { alpha: 1.0, ..c };
        assert!(q_exponent_bounds(&bad, 3, 0, SubsetIndex::singleton(0)).is_err());
        let bad = HittingConstants { beta: 0.6, ..c };
        assert!(q_exponent_bounds(&bad, 3, 0, SubsetIndex::singleton(0)).is_err());
    }

    #[test]
    fn dissemination_chain_is_doubly_stochastic() {
        for t in [GossipTopology::complete(4).unwrap(), GossipTopology::ring(5).unwrap(), GossipTopology::path(3).unwrap()] {
            assert!(MeanAdjacency::new(t.dissemination_chain().matrix().clone()).is_ok());
        }
        let k3 = GossipTopology::complete(3).unwrap().dissemination_chain();
        assert!((k3.matrix() - DMatrix::from_element(3, 3, 1.0 / 3.0)).amax() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampled_matchings_are_involutions(seed in any::<u64>(), n in 2usize..7) {
                let t = GossipTopology::complete(n).unwrap();
                let d = MatchingDistribution::greedy_maximal(&t, seed).unwrap();
                let mut rng = rng_from_seed(seed);
                for _ in 0..20 {
                    let a = d.sample(&mut rng).to_matrix();
                    prop_assert_eq!(&a, &a.transpose());
                    prop_assert_eq!(&a * &a, DMatrix::identity(n, n));
                    prop_assert!(a.row_iter().all(|r| r.sum() == 1.0));
                }
            }

            #[test]
            fn tails_monotone_and_sandwiched(n in 3usize..6, target in 0usize..3) {
                let chain = GossipTopology::ring(n).unwrap().dissemination_chain();
                let c = default_hitting_constants(&chain).unwrap();
                let tails = hitting_tail(&chain, target, 6 * c.l).unwrap();
                for k in 1..tails.len() {
                    for i in 0..n {
                        prop_assert!(tails[k][i] <= tails[k - 1][i] + 1e-15);
                    }
                }
                for k in 0..=6 {
                    for i in (0..n).filter(|&i| i != target) {
                        let t = tails[k * c.l][i];
                        prop_assert!(t <= c.alpha.powi(k as i32) + 1e-12);
                        prop_assert!(t >= c.beta.powi(k as i32) - 1e-12);
                    }
                }
            }

            #[test]
            fn upper_exponent_below_lower(alpha in 0.05f64..0.95, frac in 0.01f64..1.0, l in 1usize..5, m in 1usize..4) {
                let c = HittingConstants { alpha, beta: alpha * frac, l };
                let s = SubsetIndex::from_members(0..m);
                let b = q_exponent_bounds(&c, 4, 0, s).unwrap();
                prop_assert!(b.upper.unwrap() <= b.lower + 1e-12);
            }
        }
    }
}
