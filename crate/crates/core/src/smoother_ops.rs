//! Matrix-free operators of the smoothing objective
//!
//! ```text
//! f(x) = 1/(2σ²)‖𝓗x − z‖² + ½‖𝓖x − w‖²_{𝓠⁻¹} + (λ/2) x'𝓛x
//! ```
//!
//! `𝓗` samples `⟨U_t[i], V_t[j]⟩` for every observation, `𝓖` is the block
//! lower-bidiagonal constant-velocity process, `𝓠⁻¹` applies the inverse
//! 2×2 process covariance per coordinate pair and `𝓛` is the block-diagonal
//! trust Laplacian acting on positions. One objective/gradient evaluation
//! costs `O(Nk(m + p + q))`; nothing of size `m·n` is ever formed.
//!
//! All vectors use the [`SmootherState`] layout.

use nalgebra::DMatrix;

use crate::domain::{
    to_row_major, FactorTimeline, ProcessNoiseBlock, RatingsTimeline, SmootherConfig, SmootherState, StatePart,
    TrustTimeline,
};
use crate::error::{Error, Result};
use crate::graph_laplacian::{apply_social_into, build_timeline_laplacians, social_quadratic, LaplacianOperator};

/// Immutable description of one smoothing problem.
#[derive(Debug, Clone)]
pub struct SmootherProblem {
    bins: usize,
    users: usize,
    items: usize,
    rank: usize,
    obs_start: Vec<usize>,
    obs_user: Vec<usize>,
    obs_item: Vec<usize>,
    z: Vec<f64>,
    /// Row-major `V_t` per bin.
    item_factors: Vec<Vec<f64>>,
    /// `None` for a build without the social term.
    laplacians: Option<Vec<LaplacianOperator>>,
    noise: ProcessNoiseBlock,
    dt: f64,
    sigma: f64,
    lambda: f64,
    /// First block of `w`, `g₀ = G x₀`.
    anchor: Vec<f64>,
    /// Static user factors, the warm start for positions.
    static_users: Vec<Vec<f64>>,
}

/// The three non-negative parts of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub data: f64,
    pub process: f64,
    pub social: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data + self.process + self.social
    }
}

impl SmootherProblem {
    /// Builds the problem with item factors `V_t` and warm-start positions
    /// from `factors`. The anchor is `x₀ = (0, U_1)`, the first bin's static
    /// user factors at zero velocity.
    pub fn new(
        train: &RatingsTimeline,
        factors: &FactorTimeline,
        trust: &TrustTimeline,
        config: &SmootherConfig,
    ) -> Result<Self> {
        if trust.num_users() != train.num_users() || trust.num_bins() != train.num_bins() {
            return Err(Error::Dimension(format!(
                "trust timeline covers {} users over {} bins, ratings {} users over {} bins",
                trust.num_users(),
                trust.num_bins(),
                train.num_users(),
                train.num_bins()
            )));
        }
        let mut p = Self::build(train, factors, config)?;
        p.laplacians = Some(build_timeline_laplacians(trust));
        Ok(p)
    }

    /// Same problem with the social term removed entirely.
    pub fn without_social(train: &RatingsTimeline, factors: &FactorTimeline, config: &SmootherConfig) -> Result<Self> {
        Self::build(train, factors, config)
    }

    fn build(train: &RatingsTimeline, factors: &FactorTimeline, config: &SmootherConfig) -> Result<Self> {
        config.validate()?;
        let (m, n, k) = factors.shape();
        let bins = train.num_bins();
        if bins == 0 {
            return Err(Error::Input("smoothing needs at least one bin".into()));
        }
        if factors.num_bins() != bins || m != train.num_users() || n != train.num_items() || k != config.rank {
            return Err(Error::Dimension(format!(
                "factors are {} bins of ({m}, {n}, rank {k}); ratings are {bins} bins of ({}, {}), config rank {}",
                factors.num_bins(),
                train.num_users(),
                train.num_items(),
                config.rank
            )));
        }
        let mut obs_start = Vec::with_capacity(bins + 1);
        let (mut obs_user, mut obs_item, mut z) = (Vec::new(), Vec::new(), Vec::new());
        obs_start.push(0);
        for bin in train.bins() {
            for o in bin {
                obs_user.push(o.user);
                obs_item.push(o.item);
                z.push(o.value);
            }
            obs_start.push(z.len());
        }
        let item_factors = factors.pairs().iter().map(|p| to_row_major(&p.items)).collect();
        let static_users: Vec<Vec<f64>> = factors.pairs().iter().map(|p| to_row_major(&p.users)).collect();
        let mut problem = Self {
            bins,
            users: m,
            items: n,
            rank: k,
            obs_start,
            obs_user,
            obs_item,
            z,
            item_factors,
            laplacians: None,
            noise: ProcessNoiseBlock::new(config.dt)?,
            dt: config.dt,
            sigma: config.sigma,
            lambda: config.lambda,
            anchor: Vec::new(),
            static_users,
        };
        let first = DMatrix::from_row_slice(m, k, &problem.static_users[0]);
        problem.set_anchor_position(&first)?;
        Ok(problem)
    }

    /// Replaces the anchor with `x₀ = (0, position)`.
    pub fn with_anchor_position(mut self, position: &DMatrix<f64>) -> Result<Self> {
        self.set_anchor_position(position)?;
        Ok(self)
    }

    fn set_anchor_position(&mut self, position: &DMatrix<f64>) -> Result<()> {
        if position.shape() != (self.users, self.rank) {
            return Err(Error::Dimension(format!(
                "anchor is {:?}, expected {:?}",
                position.shape(),
                (self.users, self.rank)
            )));
        }
        let mk = self.users * self.rank;
        let mut x0 = vec![0.0; 2 * mk];
        x0[mk..].copy_from_slice(&to_row_major(position));
        let mut g0 = vec![0.0; 2 * mk];
        self.transition(&x0, &mut g0);
        self.anchor = g0;
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn has_social_term(&self) -> bool {
        self.laplacians.is_some()
    }

    pub fn state_len(&self) -> usize {
        2 * self.bins * self.users * self.rank
    }

    pub fn num_observations(&self) -> usize {
        self.z.len()
    }

    /// Stacked observations `z`.
    pub fn observations(&self) -> &[f64] {
        &self.z
    }

    /// Anchor vector `w`: `g₀` in the first block, zero elsewhere.
    pub fn anchor_vector(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.state_len()];
        w[..self.anchor.len()].copy_from_slice(&self.anchor);
        w
    }

    /// Warm start: positions from the static factors, zero velocities.
    pub fn initial_state(&self) -> SmootherState {
        let mut x = SmootherState::zeros(self.bins, self.users, self.rank);
        for (t, u) in self.static_users.iter().enumerate() {
            x.part_mut(t, StatePart::Position).copy_from_slice(u);
        }
        x
    }

    pub fn wrap_state(&self, x: Vec<f64>) -> Result<SmootherState> {
        SmootherState::from_vec(self.bins, self.users, self.rank, x)
    }

    /// Item factors `V_t` of bin `t`.
    pub fn item_factors(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.items, self.rank, &self.item_factors[t])
    }

    fn check_state(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.state_len() {
            return Err(Error::Dimension(format!(
                "{what} has length {}, expected {}",
                x.len(),
                self.state_len()
            )));
        }
        Ok(())
    }

    /// `out = G x_block` for one `(velocity, position)` block.
    fn transition(&self, block: &[f64], out: &mut [f64]) {
        let mk = self.users * self.rank;
        let (vel, pos) = block.split_at(mk);
        let (ov, op) = out.split_at_mut(mk);
        ov.copy_from_slice(vel);
        for ((o, &v), &p) in op.iter_mut().zip(vel).zip(pos) {
            *o = self.dt * v + p;
        }
    }

    /// `out += scale · 𝓗* r`.
    fn measurement_adjoint_into(&self, r: &[f64], out: &mut [f64], scale: f64) {
        let (mk, k) = (self.users * self.rank, self.rank);
        for t in 0..self.bins {
            let pos = t * 2 * mk + mk;
            let v = &self.item_factors[t];
            for l in self.obs_start[t]..self.obs_start[t + 1] {
                let s = scale * r[l];
                let row = &mut out[pos + self.obs_user[l] * k..pos + (self.obs_user[l] + 1) * k];
                let vr = &v[self.obs_item[l] * k..(self.obs_item[l] + 1) * k];
                for c in 0..k {
                    row[c] += s * vr[c];
                }
            }
        }
    }

    fn measurement_into(&self, x: &[f64], out: &mut [f64]) {
        let (mk, k) = (self.users * self.rank, self.rank);
        for t in 0..self.bins {
            let pos = &x[t * 2 * mk + mk..(t + 1) * 2 * mk];
            let v = &self.item_factors[t];
            for l in self.obs_start[t]..self.obs_start[t + 1] {
                let ur = &pos[self.obs_user[l] * k..(self.obs_user[l] + 1) * k];
                let vr = &v[self.obs_item[l] * k..(self.obs_item[l] + 1) * k];
                out[l] = ur.iter().zip(vr).map(|(a, b)| a * b).sum();
            }
        }
    }

    fn process_into(&self, x: &[f64], out: &mut [f64]) {
        let block = 2 * self.users * self.rank;
        out[..block].copy_from_slice(&x[..block]);
        let mut g = vec![0.0; block];
        for t in 1..self.bins {
            self.transition(&x[(t - 1) * block..t * block], &mut g);
            for ((o, &xi), &gi) in out[t * block..(t + 1) * block].iter_mut().zip(&x[t * block..(t + 1) * block]).zip(&g) {
                *o = xi - gi;
            }
        }
    }

    fn process_adjoint_into(&self, r: &[f64], out: &mut [f64]) {
        let mk = self.users * self.rank;
        let block = 2 * mk;
        out.copy_from_slice(r);
        for t in 0..self.bins.saturating_sub(1) {
            let next = (t + 1) * block;
            let here = t * block;
            // Gᵀ (a, b) = (a + dt·b, b)
            for c in 0..mk {
                let (a, b) = (r[next + c], r[next + mk + c]);
                out[here + c] -= a + self.dt * b;
                out[here + mk + c] -= b;
            }
        }
    }

    fn qinv_into(&self, r: &[f64], out: &mut [f64]) {
        let mk = self.users * self.rank;
        for t in 0..self.bins {
            let base = t * 2 * mk;
            for c in 0..mk {
                let (a, b) = self.noise.apply_inv(r[base + c], r[base + mk + c]);
                out[base + c] = a;
                out[base + mk + c] = b;
            }
        }
    }

    fn objective_parts(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<ObjectiveTerms> {
        self.check_state(x, "state")?;
        let mut hx = vec![0.0; self.z.len()];
        self.measurement_into(x, &mut hx);
        for (h, z) in hx.iter_mut().zip(&self.z) {
            *h -= z;
        }
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let data = 0.5 * inv_var * hx.iter().map(|r| r * r).sum::<f64>();
        if !data.is_finite() {
            return Err(Error::NonFinite { term: "measurement" });
        }

        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        // one block at a time: e_t = x_t − G x_{t−1} − w_t, then Q⁻¹e_t feeds
        // both the value and the adjoint 𝓖ᵀ𝓠⁻¹e without full-length buffers
        let mk = self.users * self.rank;
        let block = 2 * mk;
        let mut e = vec![0.0; block];
        let mut moved = vec![0.0; block];
        let mut process = 0.0;
        for t in 0..self.bins {
            let xt = &x[t * block..(t + 1) * block];
            if t == 0 {
                for ((ei, &xi), &wi) in e.iter_mut().zip(xt).zip(&self.anchor) {
                    *ei = xi - wi;
                }
            } else {
                self.transition(&x[(t - 1) * block..t * block], &mut moved);
                for ((ei, &xi), &gi) in e.iter_mut().zip(xt).zip(&moved) {
                    *ei = xi - gi;
                }
            }
            for c in 0..mk {
                let (a, b) = self.noise.apply_inv(e[c], e[mk + c]);
                process += e[c] * a + e[mk + c] * b;
                if let Some(g) = grad.as_deref_mut() {
                    g[t * block + c] += a;
                    g[t * block + mk + c] += b;
                    if t > 0 {
                        // Gᵀ (a, b) = (a + dt·b, b)
                        g[(t - 1) * block + c] -= a + self.dt * b;
                        g[(t - 1) * block + mk + c] -= b;
                    }
                }
            }
        }
        let process = 0.5 * process;
        if !process.is_finite() {
            return Err(Error::NonFinite { term: "process" });
        }

        let social = match &self.laplacians {
            Some(ops) => 0.5 * self.lambda * social_quadratic(ops, x, self.users, self.rank),
            None => 0.0,
        };
        if !social.is_finite() {
            return Err(Error::NonFinite { term: "social" });
        }

        if let Some(g) = grad {
            self.measurement_adjoint_into(&hx, g, inv_var);
            if let Some(ops) = &self.laplacians {
                apply_social_into(ops, x, self.users, self.rank, g, self.lambda)?;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { term: "gradient" });
            }
        }
        Ok(ObjectiveTerms { data, process, social })
    }
}

pub fn apply_measurement(problem: &SmootherProblem, x: &[f64]) -> Result<Vec<f64>> {
    problem.check_state(x, "state")?;
    let mut out = vec![0.0; problem.z.len()];
    problem.measurement_into(x, &mut out);
    Ok(out)
}

/// `𝓗* r`: zero on velocities, `Σ_l r_l V_t[j_l]` accumulated into row `i_l`
/// of each position block.
pub fn apply_measurement_adjoint(problem: &SmootherProblem, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != problem.z.len() {
        return Err(Error::Dimension(format!(
            "residual has length {}, expected {}",
            r.len(),
            problem.z.len()
        )));
    }
    let mut out = vec![0.0; problem.state_len()];
    problem.measurement_adjoint_into(r, &mut out, 1.0);
    Ok(out)
}

pub fn apply_process(problem: &SmootherProblem, x: &[f64]) -> Result<Vec<f64>> {
    problem.check_state(x, "state")?;
    let mut out = vec![0.0; x.len()];
    problem.process_into(x, &mut out);
    Ok(out)
}

pub fn apply_process_adjoint(problem: &SmootherProblem, r: &[f64]) -> Result<Vec<f64>> {
    problem.check_state(r, "residual")?;
    let mut out = vec![0.0; r.len()];
    problem.process_adjoint_into(r, &mut out);
    Ok(out)
}

pub fn apply_qinv(problem: &SmootherProblem, r: &[f64]) -> Result<Vec<f64>> {
    problem.check_state(r, "residual")?;
    let mut out = vec![0.0; r.len()];
    problem.qinv_into(r, &mut out);
    Ok(out)
}

/// `𝓛 x` without the `λ` factor; zero when the social term is absent.
pub fn apply_social(problem: &SmootherProblem, x: &[f64]) -> Result<Vec<f64>> {
    problem.check_state(x, "state")?;
    let mut out = vec![0.0; x.len()];
    if let Some(ops) = &problem.laplacians {
        apply_social_into(ops, x, problem.users, problem.rank, &mut out, 1.0)?;
    }
    Ok(out)
}

pub fn objective_terms(problem: &SmootherProblem, x: &[f64]) -> Result<ObjectiveTerms> {
    problem.objective_parts(x, None)
}

pub fn objective(problem: &SmootherProblem, x: &[f64]) -> Result<f64> {
    Ok(objective_terms(problem, x)?.total())
}

/// `(1/σ²)𝓗*(𝓗x − z) + 𝓖ᵀ𝓠⁻¹(𝓖x − w) + λ𝓛x`.
pub fn gradient(problem: &SmootherProblem, x: &[f64]) -> Result<Vec<f64>> {
    Ok(objective_and_gradient(problem, x)?.1)
}

/// Objective and gradient sharing one pass over the residuals.
pub fn objective_and_gradient(problem: &SmootherProblem, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; x.len()];
    let terms = problem.objective_parts(x, Some(&mut g))?;
    Ok((terms.total(), g))
}
