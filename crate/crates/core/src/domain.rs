//! Core data types shared across the pipeline.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One observed rating, already mapped to dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingObservation {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub bin: usize,
}

/// Sparse ratings split into time bins. Bin `t` holds the entries of `z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTimeline {
    users: usize,
    items: usize,
    bins: Vec<Vec<RatingObservation>>,
}

impl RatingsTimeline {
    pub fn new(users: usize, items: usize, bins: Vec<Vec<RatingObservation>>) -> Result<Self> {
        for (t, bin) in bins.iter().enumerate() {
            let mut seen = HashSet::with_capacity(bin.len());
            for obs in bin {
                if obs.user >= users || obs.item >= items {
                    return Err(Error::Input(format!(
                        "observation ({}, {}) in bin {t} outside {users}x{items}",
                        obs.user, obs.item
                    )));
                }
                if obs.bin != t {
                    return Err(Error::Input(format!(
                        "observation tagged with bin {} stored in bin {t}",
                        obs.bin
                    )));
                }
                if !obs.value.is_finite() {
                    return Err(Error::Input(format!(
                        "non-finite rating for ({}, {}) in bin {t}",
                        obs.user, obs.item
                    )));
                }
                if !seen.insert((obs.user, obs.item)) {
                    return Err(Error::Input(format!(
                        "duplicate rating for ({}, {}) in bin {t}",
                        obs.user, obs.item
                    )));
                }
            }
        }
        Ok(Self { users, items, bins })
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin(&self, t: usize) -> &[RatingObservation] {
        &self.bins[t]
    }

    pub fn bins(&self) -> &[Vec<RatingObservation>] {
        &self.bins
    }

    /// Per-bin observation counts `p_t`.
    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }
}

/// Undirected weighted trust graph for one bin, stored as an edge list with
/// `a < b`, sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustGraph {
    users: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl TrustGraph {
    /// Builds a graph from undirected edges. Endpoint order is normalized;
    /// repeated pairs are rejected.
    pub fn new(users: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut list = Vec::new();
        for (a, b, w) in edges {
            if a >= users || b >= users {
                return Err(Error::Graph(format!("edge ({a}, {b}) outside {users} users")));
            }
            if a == b {
                return Err(Error::Graph(format!("self loop at user {a}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Graph(format!("edge ({a}, {b}) has weight {w}")));
            }
            list.push((a.min(b), a.max(b), w));
        }
        list.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        if let Some(pair) = list.windows(2).find(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(Error::Graph(format!(
                "duplicate edge ({}, {})",
                pair[0].0, pair[0].1
            )));
        }
        Ok(Self { users, edges: list })
    }

    pub fn empty(users: usize) -> Self {
        Self {
            users,
            edges: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Row sums of the symmetric adjacency matrix.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.users];
        for &(a, b, w) in &self.edges {
            d[a] += w;
            d[b] += w;
        }
        d
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .is_ok()
    }
}

/// Cumulative trust graphs, one per bin. Edges never disappear.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustTimeline {
    users: usize,
    graphs: Vec<TrustGraph>,
}

impl TrustTimeline {
    pub fn new(users: usize, graphs: Vec<TrustGraph>) -> Result<Self> {
        for (t, g) in graphs.iter().enumerate() {
            if g.num_users() != users {
                return Err(Error::Dimension(format!(
                    "trust graph {t} has {} users, expected {users}",
                    g.num_users()
                )));
            }
        }
        for (t, pair) in graphs.windows(2).enumerate() {
            if let Some(&(a, b, _)) = pair[0].edges().iter().find(|e| !pair[1].contains(e.0, e.1)) {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) present in bin {t} but missing from bin {}",
                    t + 1
                )));
            }
        }
        Ok(Self { users, graphs })
    }

    /// Timeline with no edges in any bin.
    pub fn empty(users: usize, bins: usize) -> Self {
        Self {
            users,
            graphs: vec![TrustGraph::empty(users); bins],
        }
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_bins(&self) -> usize {
        self.graphs.len()
    }

    pub fn graph(&self, t: usize) -> &TrustGraph {
        &self.graphs[t]
    }

    pub fn graphs(&self) -> &[TrustGraph] {
        &self.graphs
    }
}

/// User and item factors for one bin: `R ≈ U Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub users: DMatrix<f64>,
    pub items: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(users: DMatrix<f64>, items: DMatrix<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::Dimension(format!(
                "user factors have rank {}, item factors rank {}",
                users.ncols(),
                items.ncols()
            )));
        }
        if users.iter().chain(items.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite factor entry".into()));
        }
        Ok(Self { users, items })
    }

    pub fn zeros(users: usize, items: usize, rank: usize) -> Self {
        Self {
            users: DMatrix::zeros(users, rank),
            items: DMatrix::zeros(items, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.users.ncols()
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).dot(&self.items.row(item))
    }
}

/// Factor pairs for every bin, all with the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTimeline {
    pairs: Vec<FactorPair>,
}

impl FactorTimeline {
    pub fn new(pairs: Vec<FactorPair>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let shape = (first.users.nrows(), first.items.nrows(), first.rank());
            for (t, p) in pairs.iter().enumerate() {
                if (p.users.nrows(), p.items.nrows(), p.rank()) != shape {
                    return Err(Error::Dimension(format!(
                        "factor pair {t} has shape {:?}, expected {shape:?}",
                        (p.users.nrows(), p.items.nrows(), p.rank())
                    )));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn num_bins(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, t: usize) -> &FactorPair {
        &self.pairs[t]
    }

    pub fn pairs(&self) -> &[FactorPair] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<FactorPair> {
        self.pairs
    }

    /// `(users, items, rank)`, or zeros for an empty timeline.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.pairs
            .first()
            .map(|p| (p.users.nrows(), p.items.nrows(), p.rank()))
            .unwrap_or((0, 0, 0))
    }
}

/// Which half of a per-bin state block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatePart {
    Velocity = 0,
    Position = 1,
}

/// Flat decision vector stacking `(U̇_t, U_t)` for every bin.
///
/// Layout is time-major, velocity before position, user-major within a block
/// and latent coordinate fastest, so bin `t` occupies the contiguous range
/// `t·2mk .. (t+1)·2mk`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    bins: usize,
    users: usize,
    rank: usize,
    data: Vec<f64>,
}

impl SmootherState {
    pub fn zeros(bins: usize, users: usize, rank: usize) -> Self {
        Self {
            bins,
            users,
            rank,
            data: vec![0.0; 2 * bins * users * rank],
        }
    }

    pub fn from_vec(bins: usize, users: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * bins * users * rank {
            return Err(Error::Dimension(format!(
                "state of length {} cannot hold {bins} bins of {users}x{rank}",
                data.len()
            )));
        }
        Ok(Self {
            bins,
            users,
            rank,
            data,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn block_len(&self) -> usize {
        2 * self.users * self.rank
    }

    #[inline]
    pub fn index(&self, t: usize, part: StatePart, user: usize, coord: usize) -> usize {
        let mk = self.users * self.rank;
        t * 2 * mk + part as usize * mk + user * self.rank + coord
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Row-major `m×k` slice of the given half of bin `t`.
    pub fn part(&self, t: usize, part: StatePart) -> &[f64] {
        let start = self.index(t, part, 0, 0);
        &self.data[start..start + self.users * self.rank]
    }

    pub fn part_mut(&mut self, t: usize, part: StatePart) -> &mut [f64] {
        let start = self.index(t, part, 0, 0);
        let len = self.users * self.rank;
        &mut self.data[start..start + len]
    }

    /// Packs `(velocity, position)` pairs, one per bin, into a state vector.
    pub fn pack(blocks: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<Self> {
        let Some((v0, _)) = blocks.first() else {
            return Ok(Self::zeros(0, 0, 0));
        };
        let (users, rank) = v0.shape();
        let mut state = Self::zeros(blocks.len(), users, rank);
        for (t, (vel, pos)) in blocks.iter().enumerate() {
            if vel.shape() != (users, rank) || pos.shape() != (users, rank) {
                return Err(Error::Dimension(format!(
                    "bin {t} blocks are {:?}/{:?}, expected {:?}",
                    vel.shape(),
                    pos.shape(),
                    (users, rank)
                )));
            }
            write_row_major(vel, state.part_mut(t, StatePart::Velocity));
            write_row_major(pos, state.part_mut(t, StatePart::Position));
        }
        Ok(state)
    }

    /// Copies the `(velocity, position)` blocks of bin `t` out of the state.
    pub fn unpack(&self, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if t >= self.bins {
            return Err(Error::Dimension(format!(
                "bin {t} out of range for {} bins",
                self.bins
            )));
        }
        Ok((
            DMatrix::from_row_slice(self.users, self.rank, self.part(t, StatePart::Velocity)),
            DMatrix::from_row_slice(self.users, self.rank, self.part(t, StatePart::Position)),
        ))
    }

    /// Position blocks `U_t` for every bin.
    pub fn positions(&self) -> Vec<DMatrix<f64>> {
        (0..self.bins)
            .map(|t| DMatrix::from_row_slice(self.users, self.rank, self.part(t, StatePart::Position)))
            .collect()
    }
}

/// Free-function form of [`SmootherState::pack`].
pub fn pack_state(blocks: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<SmootherState> {
    SmootherState::pack(blocks)
}

/// Free-function form of [`SmootherState::unpack`].
pub fn unpack_state(x: &SmootherState, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    x.unpack(t)
}

/// Writes `m` into `out` in row-major order.
pub fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for c in 0..cols {
            out[i * cols + c] = m[(i, c)];
        }
    }
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    write_row_major(m, &mut out);
    out
}

/// Hyperparameters for initialization, smoothing and optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherConfig {
    /// Latent rank `k`.
    pub rank: usize,
    /// Time step between bins.
    pub dt: f64,
    /// Measurement noise standard deviation.
    pub sigma: f64,
    /// Weight of the trust Laplacian penalty.
    pub lambda: f64,
    /// Frobenius penalty of the static factorization.
    pub gamma: f64,
    pub max_iter: usize,
    pub lbfgs_memory: usize,
    pub grad_tol: f64,
    /// Rotate each bin's static factors onto the previous bin's basis.
    pub align_factors: bool,
    pub seed: u64,
    /// Maximum alternating sweeps of the static factorizer.
    pub als_iters: usize,
    /// Relative objective change that stops the static factorizer.
    pub als_tol: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            dt: 1.0,
            sigma: 1.0,
            lambda: 0.0,
            gamma: 1.0,
            max_iter: 500,
            lbfgs_memory: 10,
            grad_tol: 1e-6,
            align_factors: true,
            seed: 0,
            als_iters: 30,
            als_tol: 1e-6,
        }
    }
}

impl SmootherConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        positive("dt", self.dt)?;
        positive("sigma", self.sigma)?;
        positive("gamma", self.gamma)?;
        positive("grad_tol", self.grad_tol)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.max_iter == 0 || self.lbfgs_memory == 0 || self.als_iters == 0 {
            return Err(Error::Config(
                "max_iter, lbfgs_memory and als_iters must be positive".into(),
            ));
        }
        if !(self.als_tol.is_finite() && self.als_tol >= 0.0) {
            return Err(Error::Config(format!("als_tol must be non-negative, got {}", self.als_tol)));
        }
        Ok(())
    }
}

/// Per-coordinate process covariance of the constant-velocity model and its
/// inverse. Acts on `(velocity, position)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoiseBlock {
    pub q: [[f64; 2]; 2],
    pub q_inv: [[f64; 2]; 2],
}

impl ProcessNoiseBlock {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let dt2 = dt * dt;
        let dt3 = dt2 * dt;
        let q = [[dt, dt2 / 2.0], [dt2 / 2.0, dt3 / 3.0]];
        // det(q) = dt⁴/12
        let s = 12.0 / (dt2 * dt2);
        let q_inv = [[s * dt3 / 3.0, -s * dt2 / 2.0], [-s * dt2 / 2.0, s * dt]];
        Ok(Self { q, q_inv })
    }

    #[inline]
    pub fn apply_inv(&self, vel: f64, pos: f64) -> (f64, f64) {
        let m = &self.q_inv;
        (m[0][0] * vel + m[0][1] * pos, m[1][0] * vel + m[1][1] * pos)
    }

    #[inline]
    pub fn apply(&self, vel: f64, pos: f64) -> (f64, f64) {
        let m = &self.q;
        (m[0][0] * vel + m[0][1] * pos, m[1][0] * vel + m[1][1] * pos)
    }
}
