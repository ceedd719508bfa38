//! Unnormalized graph Laplacians `L = D − W` applied without forming `L`.

use nalgebra::DMatrix;

use crate::domain::{to_row_major, SmootherState, TrustGraph, TrustTimeline};
use crate::error::{Error, Result};

/// Laplacian of one trust graph in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianOperator {
    users: usize,
    row_start: Vec<usize>,
    neighbours: Vec<usize>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
}

impl LaplacianOperator {
    pub fn from_graph(graph: &TrustGraph) -> Self {
        let m = graph.num_users();
        let mut counts = vec![0usize; m];
        for &(a, b, _) in graph.edges() {
            counts[a] += 1;
            counts[b] += 1;
        }
        let mut row_start = vec![0usize; m + 1];
        for i in 0..m {
            row_start[i + 1] = row_start[i] + counts[i];
        }
        let mut fill = row_start.clone();
        let nnz = row_start[m];
        let mut neighbours = vec![0usize; nnz];
        let mut weights = vec![0.0; nnz];
        for &(a, b, w) in graph.edges() {
            for (from, to) in [(a, b), (b, a)] {
                neighbours[fill[from]] = to;
                weights[fill[from]] = w;
                fill[from] += 1;
            }
        }
        Self {
            users: m,
            row_start,
            neighbours,
            weights,
            degrees: graph.degrees(),
        }
    }

    /// Builds from adjacency triplets `(row, col, weight)` listing both
    /// directions of every edge. Rejects asymmetric, negative or self-loop
    /// input.
    pub fn from_triplets(users: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut directed: Vec<(usize, usize, f64)> = entries.to_vec();
        directed.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut undirected = Vec::new();
        for &(i, j, w) in &directed {
            if w < 0.0 {
                return Err(Error::Graph(format!("negative weight {w} at ({i}, {j})")));
            }
            let mirror = directed
                .binary_search_by(|e| (e.0, e.1).cmp(&(j, i)))
                .map(|p| directed[p].2);
            if mirror != Ok(w) {
                return Err(Error::Graph(format!("adjacency not symmetric at ({i}, {j})")));
            }
            if i < j {
                undirected.push((i, j, w));
            }
        }
        Ok(Self::from_graph(&TrustGraph::new(users, undirected)?))
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn num_edges(&self) -> usize {
        self.neighbours.len() / 2
    }

    /// `out = L u` for a row-major `m×k` block `u`.
    pub fn apply_rows(&self, u: &[f64], rank: usize, out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.users * rank);
        for i in 0..self.users {
            let row = &mut out[i * rank..(i + 1) * rank];
            let d = self.degrees[i];
            for c in 0..rank {
                row[c] = d * u[i * rank + c];
            }
            for p in self.row_start[i]..self.row_start[i + 1] {
                let j = self.neighbours[p];
                let w = self.weights[p];
                for c in 0..rank {
                    row[c] -= w * u[j * rank + c];
                }
            }
        }
    }

    /// `tr(uᵀ L u)` for a row-major block, as a sum over edges.
    pub fn quadratic_rows(&self, u: &[f64], rank: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..self.users {
            for p in self.row_start[i]..self.row_start[i + 1] {
                let j = self.neighbours[p];
                if j <= i {
                    continue;
                }
                let mut dist = 0.0;
                for c in 0..rank {
                    let diff = u[i * rank + c] - u[j * rank + c];
                    dist += diff * diff;
                }
                total += self.weights[p] * dist;
            }
        }
        total
    }

    fn check_rows(&self, u: &DMatrix<f64>) -> Result<()> {
        if u.nrows() != self.users {
            return Err(Error::Dimension(format!(
                "factor matrix has {} rows, graph has {} users",
                u.nrows(),
                self.users
            )));
        }
        Ok(())
    }
}

pub fn build_laplacian(graph: &TrustGraph) -> LaplacianOperator {
    LaplacianOperator::from_graph(graph)
}

/// `L U`, one column at a time.
pub fn apply_laplacian(op: &LaplacianOperator, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    op.check_rows(u)?;
    let rank = u.ncols();
    let mut out = vec![0.0; u.len()];
    op.apply_rows(&to_row_major(u), rank, &mut out);
    Ok(DMatrix::from_row_slice(u.nrows(), rank, &out))
}

/// `tr(Uᵀ L U) = Σ_edges w_ij ‖U_i − U_j‖²`.
pub fn laplacian_quadratic(op: &LaplacianOperator, u: &DMatrix<f64>) -> Result<f64> {
    op.check_rows(u)?;
    Ok(op.quadratic_rows(&to_row_major(u), u.ncols()))
}

pub fn build_timeline_laplacians(trust: &TrustTimeline) -> Vec<LaplacianOperator> {
    trust.graphs().iter().map(LaplacianOperator::from_graph).collect()
}

/// Block-diagonal social operator applied to a full state: zero on velocity
/// blocks, `L_t U_t` on each position block.
pub fn apply_social_block(ops: &[LaplacianOperator], x: &SmootherState) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.as_slice().len()];
    apply_social_into(ops, x.as_slice(), x.num_users(), x.rank(), &mut out, 1.0)?;
    Ok(out)
}

/// `out += scale · 𝓛 x` on a flat state vector.
pub(crate) fn apply_social_into(
    ops: &[LaplacianOperator],
    x: &[f64],
    users: usize,
    rank: usize,
    out: &mut [f64],
    scale: f64,
) -> Result<()> {
    let mk = users * rank;
    if x.len() != 2 * ops.len() * mk || out.len() != x.len() {
        return Err(Error::Dimension(format!(
            "state of length {} does not match {} bins of {users}x{rank}",
            x.len(),
            ops.len()
        )));
    }
    if let Some(op) = ops.iter().find(|op| op.num_users() != users) {
        return Err(Error::Dimension(format!(
            "Laplacian over {} users applied to {users} users",
            op.num_users()
        )));
    }
    let mut buf = vec![0.0; mk];
    for (t, op) in ops.iter().enumerate() {
        let start = t * 2 * mk + mk;
        op.apply_rows(&x[start..start + mk], rank, &mut buf);
        for (o, b) in out[start..start + mk].iter_mut().zip(&buf) {
            *o += scale * b;
        }
    }
    Ok(())
}

/// `x' 𝓛 x = Σ_t tr(U_tᵀ L_t U_t)`.
pub(crate) fn social_quadratic(ops: &[LaplacianOperator], x: &[f64], users: usize, rank: usize) -> f64 {
    let mk = users * rank;
    ops.iter()
        .enumerate()
        .map(|(t, op)| {
            let start = t * 2 * mk + mk;
            op.quadratic_rows(&x[start..start + mk], rank)
        })
        .sum()
}
