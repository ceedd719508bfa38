//! Shared fixtures: random small problems and an explicitly assembled dense
//! version of the smoothing objective.
//!
//! The dense oracle is built from the raw inputs only. It stacks each bin as
//! `(vec(U̇), vec(U))` with column-major `vec`, uses `H_t = A_t (V_t ⊗ I_m) [0 I]`,
//! Kronecker process blocks and a numerically inverted `Q`, and maps to the
//! production layout through `SmootherState::index`.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trustdyn::domain::StatePart;
use trustdyn::smoother_ops::SmootherProblem;
use trustdyn::{
    FactorPair, FactorTimeline, RatingObservation, RatingsTimeline, SmootherConfig, SmootherState, TrustGraph,
    TrustTimeline,
};

pub struct Shape {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub bins: usize,
    /// Observations per bin.
    pub per_bin: usize,
    /// Edges in the final cumulative graph.
    pub edges: usize,
}

pub struct Instance {
    pub train: RatingsTimeline,
    pub factors: FactorTimeline,
    pub trust: TrustTimeline,
    pub config: SmootherConfig,
}

impl Instance {
    pub fn problem(&self) -> SmootherProblem {
        SmootherProblem::new(&self.train, &self.factors, &self.trust, &self.config).unwrap()
    }

    pub fn social_free(&self) -> SmootherProblem {
        SmootherProblem::without_social(&self.train, &self.factors, &self.config).unwrap()
    }

    pub fn state_len(&self) -> usize {
        let s = &self.config;
        2 * self.train.num_bins() * self.train.num_users() * s.rank
    }
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random ratings, factors and cumulative trust of the given shape.
pub fn random_instance(shape: &Shape, sigma: f64, dt: f64, lambda: f64, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, k, bins) = (shape.users, shape.items, shape.rank, shape.bins);
    let per_bin = shape.per_bin.min(m * n);
    let mut ratings = Vec::new();
    for t in 0..bins {
        let mut cells = sample(&mut rng, m * n, per_bin).into_vec();
        cells.sort_unstable();
        ratings.push(
            cells
                .into_iter()
                .map(|c| RatingObservation {
                    user: c / n,
                    item: c % n,
                    value: rng.random_range(1.0..5.0),
                    bin: t,
                })
                .collect(),
        );
    }
    let train = RatingsTimeline::new(m, n, ratings).unwrap();

    let pairs = (0..bins)
        .map(|_| FactorPair::new(normal_matrix(&mut rng, m, k), normal_matrix(&mut rng, n, k)).unwrap())
        .collect();
    let factors = FactorTimeline::new(pairs).unwrap();

    // each edge appears at a random bin and stays
    let max_edges = m * (m - 1) / 2;
    let mut edges: Vec<(usize, usize, f64, usize)> = Vec::new();
    for cell in sample(&mut rng, max_edges, shape.edges.min(max_edges)) {
        let (a, b) = pair_of(cell, m);
        edges.push((a, b, rng.random_range(0.5..2.0), rng.random_range(0..bins)));
    }
    let graphs = (0..bins)
        .map(|t| TrustGraph::new(m, edges.iter().filter(|e| e.3 <= t).map(|e| (e.0, e.1, e.2))).unwrap())
        .collect();
    let trust = TrustTimeline::new(m, graphs).unwrap();

    let config = SmootherConfig {
        sigma,
        dt,
        lambda,
        ..SmootherConfig::with_rank(k)
    };
    Instance {
        train,
        factors,
        trust,
        config,
    }
}

fn pair_of(mut cell: usize, m: usize) -> (usize, usize) {
    for a in 0..m {
        let row = m - a - 1;
        if cell < row {
            return (a, a + 1 + cell);
        }
        cell -= row;
    }
    unreachable!()
}

pub struct DenseOracle {
    pub users: usize,
    pub rank: usize,
    pub bins: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
    pub social: DMatrix<f64>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    /// `perm[dense index] = production index`.
    pub perm: Vec<usize>,
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

impl DenseOracle {
    pub fn new(inst: &Instance) -> Self {
        let (m, k, bins) = (inst.train.num_users(), inst.config.rank, inst.train.num_bins());
        let n = inst.train.num_items();
        let (mk, block) = (m * k, 2 * m * k);
        let dim = bins * block;
        let dt = inst.config.dt;

        let total = inst.train.total();
        let mut h = DMatrix::zeros(total, dim);
        let mut z = DVector::zeros(total);
        let mut row = 0;
        for (t, obs) in inst.train.bins().iter().enumerate() {
            let v = &inst.factors.pair(t).items;
            let op = kron(v, &DMatrix::identity(m, m));
            for o in obs {
                // sampling row of vec(R) (column-major, entry i + j·m)
                let r = o.user + o.item * m;
                for c in 0..mk {
                    h[(row, t * block + mk + c)] = op[(r, c)];
                }
                z[row] = o.value;
                row += 1;
            }
            assert_eq!(op.nrows(), m * n);
        }

        let eye = DMatrix::<f64>::identity(mk, mk);
        let mut gt = DMatrix::zeros(block, block);
        gt.view_mut((0, 0), (mk, mk)).copy_from(&eye);
        gt.view_mut((mk, 0), (mk, mk)).copy_from(&(&eye * dt));
        gt.view_mut((mk, mk), (mk, mk)).copy_from(&eye);

        let mut g = DMatrix::identity(dim, dim);
        for t in 1..bins {
            g.view_mut((t * block, (t - 1) * block), (block, block)).copy_from(&(-&gt));
        }

        let q2 = DMatrix::from_row_slice(2, 2, &[dt, dt * dt / 2.0, dt * dt / 2.0, dt.powi(3) / 3.0]);
        let q_block = kron(&q2, &eye);
        let q_block_inv = q_block.try_inverse().expect("Q is invertible");
        let mut q_inv = DMatrix::zeros(dim, dim);
        let mut social = DMatrix::zeros(dim, dim);
        for t in 0..bins {
            q_inv.view_mut((t * block, t * block), (block, block)).copy_from(&q_block_inv);
            let mut l = DMatrix::<f64>::zeros(m, m);
            for &(a, b, wt) in inst.trust.graph(t).edges() {
                l[(a, b)] -= wt;
                l[(b, a)] -= wt;
                l[(a, a)] += wt;
                l[(b, b)] += wt;
            }
            let lk = kron(&DMatrix::identity(k, k), &l);
            social.view_mut((t * block + mk, t * block + mk), (mk, mk)).copy_from(&lk);
        }

        let mut x0 = DVector::zeros(block);
        x0.rows_mut(mk, mk).copy_from(&vec_col_major(&inst.factors.pair(0).users));
        let mut w = DVector::zeros(dim);
        w.rows_mut(0, block).copy_from(&(&gt * x0));

        let layout = SmootherState::zeros(bins, m, k);
        let mut perm = vec![0; dim];
        for t in 0..bins {
            for (p, part) in [StatePart::Velocity, StatePart::Position].into_iter().enumerate() {
                for c in 0..k {
                    for i in 0..m {
                        perm[t * block + p * mk + c * m + i] = layout.index(t, part, i, c);
                    }
                }
            }
        }

        Self {
            users: m,
            rank: k,
            bins,
            sigma: inst.config.sigma,
            lambda: inst.config.lambda,
            h,
            g,
            q_inv,
            social,
            z,
            w,
            perm,
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Production-layout vector to dense layout.
    pub fn to_dense(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.perm.iter().map(|&p| x[p]))
    }

    pub fn from_dense(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (d, &p) in self.perm.iter().enumerate() {
            out[p] = x[d];
        }
        out
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let r = &self.h * x - &self.z;
        let e = &self.g * x - &self.w;
        r.norm_squared() / (2.0 * self.sigma * self.sigma)
            + 0.5 * e.dot(&(&self.q_inv * &e))
            + 0.5 * self.lambda * x.dot(&(&self.social * x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.h * x - &self.z;
        let e = &self.g * x - &self.w;
        self.h.transpose() * r / (self.sigma * self.sigma)
            + self.g.transpose() * (&self.q_inv * e)
            + &self.social * x * self.lambda
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        self.h.transpose() * &self.h / (self.sigma * self.sigma)
            + self.g.transpose() * &self.q_inv * &self.g
            + &self.social * self.lambda
    }

    /// Solves the normal equations `∇f(x) = 0`.
    pub fn minimizer(&self) -> DVector<f64> {
        let rhs = self.h.transpose() * &self.z / (self.sigma * self.sigma) + self.g.transpose() * (&self.q_inv * &self.w);
        self.hessian().cholesky().expect("Hessian is positive definite").solve(&rhs)
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn scalar_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Tiny shapes used by the dense-oracle checks.
pub fn tiny_shape(rng: &mut ChaCha8Rng) -> Shape {
    let users = rng.random_range(2..=6);
    let items = rng.random_range(1..=5);
    Shape {
        users,
        items,
        rank: rng.random_range(1..=2),
        bins: rng.random_range(1..=4),
        per_bin: rng.random_range(1..=users * items),
        edges: rng.random_range(0..=users * (users - 1) / 2),
    }
}
