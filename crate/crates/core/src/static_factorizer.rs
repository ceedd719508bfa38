//! Per-bin static factorization used to initialize the smoother.
//!
//! Each bin is factored independently by alternating ridge solves on
//!
//! ```text
//! ½‖z − 𝒜(UVᵀ)‖² + (γ/2)(‖U‖²_F + ‖V‖²_F)
//! ```
//!
//! Every half-step minimizes exactly over one block, so the objective never
//! increases. Users or items without observations come out as zero rows.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::domain::{to_row_major, FactorPair, FactorTimeline, RatingObservation, SmootherConfig};
use crate::error::{Error, Result};
use crate::ingest::SplitTimeline;

/// Stopping rules for the alternating solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsOptions {
    pub max_iters: usize,
    /// Stop when the relative objective change of a full sweep drops below this.
    pub rel_tol: f64,
    /// Stop when the gradient norm of the penalized objective drops below
    /// this. Zero disables the check.
    pub grad_tol: f64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 30,
            rel_tol: 1e-6,
            grad_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StaticFit {
    pub factors: FactorPair,
    /// Objective at the random start and after every half-step.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub grad_norm: f64,
}

/// Observations grouped by row, compressed.
struct Incidence {
    start: Vec<usize>,
    other: Vec<usize>,
    value: Vec<f64>,
}

impl Incidence {
    fn build(rows: usize, entries: impl Iterator<Item = (usize, usize, f64)> + Clone) -> Self {
        let mut start = vec![0usize; rows + 1];
        for (r, _, _) in entries.clone() {
            start[r + 1] += 1;
        }
        for r in 0..rows {
            start[r + 1] += start[r];
        }
        let mut fill = start.clone();
        let nnz = start[rows];
        let mut other = vec![0; nnz];
        let mut value = vec![0.0; nnz];
        for (r, o, v) in entries {
            other[fill[r]] = o;
            value[fill[r]] = v;
            fill[r] += 1;
        }
        Self { start, other, value }
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.start[r]..self.start[r + 1]).map(move |p| (self.other[p], self.value[p]))
    }
}

/// Solves the ridge system of every row of `target` against the fixed
/// row-major factors `fixed`.
fn ridge_half_step(target: &mut [f64], fixed: &[f64], incidence: &Incidence, rank: usize, gamma: f64) {
    target
        .par_chunks_mut(rank)
        .enumerate()
        .for_each(|(r, row)| {
            let mut gram = DMatrix::<f64>::identity(rank, rank) * gamma;
            let mut rhs = DVector::<f64>::zeros(rank);
            for (o, z) in incidence.row(r) {
                let f = &fixed[o * rank..(o + 1) * rank];
                for a in 0..rank {
                    rhs[a] += z * f[a];
                    for b in 0..=a {
                        gram[(a, b)] += f[a] * f[b];
                    }
                }
            }
            for a in 0..rank {
                for b in 0..a {
                    gram[(b, a)] = gram[(a, b)];
                }
            }
            // γI makes the system positive definite
            let sol = gram
                .cholesky()
                .expect("ridge system is positive definite")
                .solve(&rhs);
            row.copy_from_slice(sol.as_slice());
        });
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective_rows(obs: &[RatingObservation], u: &[f64], v: &[f64], rank: usize, gamma: f64) -> f64 {
    let misfit: f64 = obs
        .iter()
        .map(|o| {
            let r = o.value - dot(&u[o.user * rank..(o.user + 1) * rank], &v[o.item * rank..(o.item + 1) * rank]);
            r * r
        })
        .sum();
    let norms: f64 = u.iter().chain(v).map(|x| x * x).sum();
    0.5 * misfit + 0.5 * gamma * norms
}

fn gradient_norm_rows(obs: &[RatingObservation], u: &[f64], v: &[f64], rank: usize, gamma: f64) -> f64 {
    let mut gu: Vec<f64> = u.iter().map(|x| gamma * x).collect();
    let mut gv: Vec<f64> = v.iter().map(|x| gamma * x).collect();
    for o in obs {
        let ur = &u[o.user * rank..(o.user + 1) * rank];
        let vr = &v[o.item * rank..(o.item + 1) * rank];
        let r = o.value - dot(ur, vr);
        for c in 0..rank {
            gu[o.user * rank + c] -= r * vr[c];
            gv[o.item * rank + c] -= r * ur[c];
        }
    }
    gu.iter().chain(&gv).map(|g| g * g).sum::<f64>().sqrt()
}

/// Penalized objective of a factor pair on a set of observations.
pub fn penalized_objective(obs: &[RatingObservation], factors: &FactorPair, gamma: f64) -> f64 {
    objective_rows(obs, &to_row_major(&factors.users), &to_row_major(&factors.items), factors.rank(), gamma)
}

/// Euclidean norm of the gradient of [`penalized_objective`] in `(U, V)`.
pub fn penalized_gradient_norm(obs: &[RatingObservation], factors: &FactorPair, gamma: f64) -> f64 {
    gradient_norm_rows(obs, &to_row_major(&factors.users), &to_row_major(&factors.items), factors.rank(), gamma)
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, rank: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0 / (rank as f64).sqrt()).unwrap();
    (0..rows * rank).map(|_| normal.sample(rng)).collect()
}

/// Factors one bin of observations, updating users first then items each sweep.
pub fn factorize_bin(
    observations: &[RatingObservation],
    users: usize,
    items: usize,
    rank: usize,
    gamma: f64,
    options: &AlsOptions,
    seed: u64,
) -> Result<StaticFit> {
    if rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    if observations.is_empty() {
        return Err(Error::Input("cannot factor a bin without observations".into()));
    }
    if let Some(o) = observations.iter().find(|o| o.user >= users || o.item >= items) {
        return Err(Error::Dimension(format!(
            "observation ({}, {}) outside {users}x{items}",
            o.user, o.item
        )));
    }
    let by_user = Incidence::build(users, observations.iter().map(|o| (o.user, o.item, o.value)));
    let by_item = Incidence::build(items, observations.iter().map(|o| (o.item, o.user, o.value)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = gaussian_rows(&mut rng, users, rank);
    let mut v = gaussian_rows(&mut rng, items, rank);

    let mut trace = vec![objective_rows(observations, &u, &v, rank, gamma)];
    let mut sweeps = 0;
    let mut grad_norm = f64::NAN;
    while sweeps < options.max_iters {
        let before = *trace.last().unwrap();
        ridge_half_step(&mut u, &v, &by_user, rank, gamma);
        trace.push(objective_rows(observations, &u, &v, rank, gamma));
        ridge_half_step(&mut v, &u, &by_item, rank, gamma);
        let after = objective_rows(observations, &u, &v, rank, gamma);
        trace.push(after);
        sweeps += 1;
        if !after.is_finite() {
            return Err(Error::NonFinite { term: "static factorization" });
        }
        if (before - after).abs() < options.rel_tol * after.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if options.grad_tol > 0.0 {
            grad_norm = gradient_norm_rows(observations, &u, &v, rank, gamma);
            if grad_norm <= options.grad_tol {
                break;
            }
        }
    }
    if grad_norm.is_nan() {
        grad_norm = gradient_norm_rows(observations, &u, &v, rank, gamma);
    }
    let factors = FactorPair::new(
        DMatrix::from_row_slice(users, rank, &u),
        DMatrix::from_row_slice(items, rank, &v),
    )?;
    Ok(StaticFit {
        factors,
        trace,
        sweeps,
        grad_norm,
    })
}

/// Rotates `current` by the orthogonal `R` minimizing `‖V_cur R − V_ref‖_F`.
/// The product `U Vᵀ` is unchanged.
pub fn align_factor_pair(current: &FactorPair, reference: &FactorPair) -> Result<FactorPair> {
    if current.items.shape() != reference.items.shape() {
        return Err(Error::Dimension(format!(
            "cannot align item factors {:?} to {:?}",
            current.items.shape(),
            reference.items.shape()
        )));
    }
    let cross = current.items.transpose() * &reference.items;
    let svd = cross.svd(true, true);
    let rotation = svd.u.unwrap() * svd.v_t.unwrap();
    Ok(FactorPair {
        users: &current.users * &rotation,
        items: &current.items * &rotation,
    })
}

/// Static factors for every bin of the training split. Empty bins get zero
/// factors; with `align_factors` each bin is rotated onto its predecessor.
pub fn init_timeline(split: &SplitTimeline, config: &SmootherConfig) -> Result<FactorTimeline> {
    config.validate()?;
    let train = &split.train;
    let (m, n, k) = (train.num_users(), train.num_items(), config.rank);
    let options = AlsOptions {
        max_iters: config.als_iters,
        rel_tol: config.als_tol,
        grad_tol: 0.0,
    };
    let pairs = (0..train.num_bins())
        .into_par_iter()
        .map(|t| {
            let obs = train.bin(t);
            if obs.is_empty() {
                log::warn!("bin {t} has no training ratings; using zero factors");
                return Ok(FactorPair::zeros(m, n, k));
            }
            let fit = factorize_bin(obs, m, n, k, config.gamma, &options, bin_seed(config.seed, t))?;
            Ok(fit.factors)
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = if config.align_factors {
        align_sequence(pairs)?
    } else {
        pairs
    };
    FactorTimeline::new(pairs)
}

fn align_sequence(pairs: Vec<FactorPair>) -> Result<Vec<FactorPair>> {
    let mut out: Vec<FactorPair> = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let aligned = match out.iter().rev().find(|p| p.items.iter().any(|v| *v != 0.0)) {
            Some(reference) if pair.items.iter().any(|v| *v != 0.0) => align_factor_pair(&pair, reference)?,
            _ => pair,
        };
        out.push(aligned);
    }
    Ok(out)
}

/// Independent seed for bin `t` derived from the run seed.
pub fn bin_seed(seed: u64, t: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add((t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
