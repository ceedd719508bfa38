//! Static / dynamic / dynamic+social comparison, λ and k sweeps, the
//! synthetic data generator and the trust-versus-similarity overlap
//! diagnostic.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::domain::{
    FactorPair, FactorTimeline, RatingObservation, RatingsTimeline, SmootherConfig, SmootherState, TrustGraph,
    TrustTimeline,
};
use crate::error::{Error, Result};
use crate::graph_laplacian::{apply_laplacian, build_laplacian};
use crate::ingest::{split_train_test, write_canonical, BinnedData, IdMap, SplitTimeline};
use crate::matio::write_matrix;
use crate::optimizer::{lbfgs_minimize, LbfgsOptions, LbfgsResult, Status};
use crate::smoother_ops::{objective_and_gradient, SmootherProblem};
use crate::static_factorizer::init_timeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Static,
    Dynamic,
    DynamicSocial,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Static => "static",
            ModelKind::Dynamic => "dynamic",
            ModelKind::DynamicSocial => "dynamic_social",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    /// `None` for bins without test ratings.
    pub per_bin: Vec<Option<f64>>,
    /// `sqrt(Σ p_t·mse_t / Σ p_t)` over non-empty bins.
    pub weighted: f64,
}

/// Test RMSE of `⟨U_t[i], V_t[j]⟩` per bin and weighted by bin size.
pub fn evaluate_rmse(factors: &FactorTimeline, test: &RatingsTimeline) -> Result<RmseReport> {
    let (m, n, _) = factors.shape();
    if factors.num_bins() != test.num_bins() || m != test.num_users() || n != test.num_items() {
        return Err(Error::Dimension(format!(
            "factors cover {} bins of {m}x{n}, test set {} bins of {}x{}",
            factors.num_bins(),
            test.num_bins(),
            test.num_users(),
            test.num_items()
        )));
    }
    let mut per_bin = Vec::with_capacity(test.num_bins());
    let (mut sse, mut count) = (0.0, 0usize);
    for (t, bin) in test.bins().iter().enumerate() {
        if bin.is_empty() {
            per_bin.push(None);
            continue;
        }
        let pair = factors.pair(t);
        let bin_sse: f64 = bin
            .iter()
            .map(|o| {
                let r = pair.predict(o.user, o.item) - o.value;
                r * r
            })
            .sum();
        per_bin.push(Some((bin_sse / bin.len() as f64).sqrt()));
        sse += bin_sse;
        count += bin.len();
    }
    if count == 0 {
        return Err(Error::Input("test set has no ratings".into()));
    }
    Ok(RmseReport {
        per_bin,
        weighted: (sse / count as f64).sqrt(),
    })
}

/// One row of a comparison.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: ModelKind,
    pub rank: usize,
    /// `None` for models without a social weight.
    pub lambda: Option<f64>,
    pub rmse: RmseReport,
    pub wall_seconds: f64,
    pub config: SmootherConfig,
    pub seed: u64,
    pub status: String,
    /// Objective value after every accepted optimizer step (empty for static).
    pub objective_trace: Vec<f64>,
}

impl ExperimentResult {
    pub fn weighted_rmse(&self) -> f64 {
        self.rmse.weighted
    }

    fn failed(model: ModelKind, config: &SmootherConfig, lambda: Option<f64>, bins: usize, err: &Error) -> Self {
        Self {
            model,
            rank: config.rank,
            lambda,
            rmse: RmseReport {
                per_bin: vec![None; bins],
                weighted: f64::NAN,
            },
            wall_seconds: 0.0,
            config: config.clone(),
            seed: config.seed,
            status: format!("error: {err}"),
            objective_trace: Vec::new(),
        }
    }
}

fn static_result(factors: &FactorTimeline, split: &SplitTimeline, config: &SmootherConfig, elapsed: Duration) -> Result<ExperimentResult> {
    Ok(ExperimentResult {
        model: ModelKind::Static,
        rank: config.rank,
        lambda: None,
        rmse: evaluate_rmse(factors, &split.test)?,
        wall_seconds: elapsed.as_secs_f64(),
        config: config.clone(),
        seed: config.seed,
        status: "ok".into(),
        objective_trace: Vec::new(),
    })
}

/// Independent per-bin static factorization, evaluated on the test split.
pub fn run_static(split: &SplitTimeline, config: &SmootherConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let factors = init_timeline(split, config)?;
    static_result(&factors, split, config, start.elapsed())
}

/// Output of one smoother run.
#[derive(Debug, Clone)]
pub struct SmoothOutcome {
    pub state: SmootherState,
    pub optimizer: LbfgsResult,
    /// Smoothed `U_t` paired with the fixed static `V_t`.
    pub factors: FactorTimeline,
}

/// Minimizes the smoothing objective from the static warm start. `trust =
/// None` builds the problem without the social term.
pub fn smooth(
    train: &RatingsTimeline,
    trust: Option<&TrustTimeline>,
    factors: &FactorTimeline,
    config: &SmootherConfig,
) -> Result<SmoothOutcome> {
    let problem = match trust {
        Some(trust) => SmootherProblem::new(train, factors, trust, config)?,
        None => SmootherProblem::without_social(train, factors, config)?,
    };
    let options = LbfgsOptions {
        memory: config.lbfgs_memory,
        max_iter: config.max_iter,
        grad_tol: config.grad_tol,
        ..LbfgsOptions::default()
    };
    let x0 = problem.initial_state().into_vec();
    let result = lbfgs_minimize(|x| objective_and_gradient(&problem, x), x0, &options)?;
    if result.status == Status::LineSearchFailed {
        log::warn!("line search failed after {} iterations", result.trace.len() - 1);
    }
    let state = problem.wrap_state(result.x.clone())?;
    let pairs = state
        .positions()
        .into_iter()
        .zip(factors.pairs())
        .map(|(u, p)| FactorPair::new(u, p.items.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SmoothOutcome {
        state,
        optimizer: result,
        factors: FactorTimeline::new(pairs)?,
    })
}

/// Smoother run on given static factors; `lambda = 0` is the plain dynamic
/// model.
pub fn run_dynamic_with_factors(
    split: &SplitTimeline,
    trust: Option<&TrustTimeline>,
    factors: &FactorTimeline,
    config: &SmootherConfig,
    lambda: f64,
) -> Result<ExperimentResult> {
    let start = Instant::now();
    let config = SmootherConfig {
        lambda,
        ..config.clone()
    };
    let out = smooth(&split.train, trust, factors, &config)?;
    let model = if lambda == 0.0 || trust.is_none() {
        ModelKind::Dynamic
    } else {
        ModelKind::DynamicSocial
    };
    Ok(ExperimentResult {
        model,
        rank: config.rank,
        lambda: Some(lambda),
        rmse: evaluate_rmse(&out.factors, &split.test)?,
        wall_seconds: start.elapsed().as_secs_f64(),
        seed: config.seed,
        status: out.optimizer.status.as_str().into(),
        objective_trace: out.optimizer.trace.iter().map(|r| r.f).collect(),
        config,
    })
}

/// Static initialization followed by smoothing with social weight `lambda`.
pub fn run_dynamic(split: &SplitTimeline, trust: &TrustTimeline, config: &SmootherConfig, lambda: f64) -> Result<ExperimentResult> {
    let factors = init_timeline(split, config)?;
    run_dynamic_with_factors(split, Some(trust), &factors, config, lambda)
}

/// Static and dynamic once per rank, dynamic+social once per (rank, λ).
/// Failed runs become rows with an `error:` status.
pub fn sweep(
    split: &SplitTimeline,
    trust: &TrustTimeline,
    ranks: &[usize],
    lambdas: &[f64],
    config: &SmootherConfig,
    parallel: bool,
) -> Result<Vec<ExperimentResult>> {
    if ranks.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one rank and one lambda".into()));
    }
    let bins = split.train.num_bins();
    let per_rank = |&rank: &usize| -> Vec<ExperimentResult> {
        let cfg = SmootherConfig {
            rank,
            ..config.clone()
        };
        let start = Instant::now();
        let factors = match init_timeline(split, &cfg) {
            Ok(f) => f,
            Err(e) => {
                let mut rows = vec![
                    ExperimentResult::failed(ModelKind::Static, &cfg, None, bins, &e),
                    ExperimentResult::failed(ModelKind::Dynamic, &cfg, Some(0.0), bins, &e),
                ];
                rows.extend(lambdas.iter().map(|&l| ExperimentResult::failed(ModelKind::DynamicSocial, &cfg, Some(l), bins, &e)));
                return rows;
            }
        };
        let static_elapsed = start.elapsed();
        let mut rows = vec![static_result(&factors, split, &cfg, static_elapsed)
            .unwrap_or_else(|e| ExperimentResult::failed(ModelKind::Static, &cfg, None, bins, &e))];
        let run = |model: ModelKind, lambda: f64| {
            let trust = (model == ModelKind::DynamicSocial).then_some(trust);
            let mut row = run_dynamic_with_factors(split, trust, &factors, &cfg, lambda)
                .unwrap_or_else(|e| ExperimentResult::failed(model, &cfg, Some(lambda), bins, &e));
            row.model = model;
            row
        };
        let jobs: Vec<(ModelKind, f64)> = std::iter::once((ModelKind::Dynamic, 0.0))
            .chain(lambdas.iter().map(|&l| (ModelKind::DynamicSocial, l)))
            .collect();
        if parallel {
            rows.extend(jobs.par_iter().map(|&(m, l)| run(m, l)).collect::<Vec<_>>());
        } else {
            rows.extend(jobs.iter().map(|&(m, l)| run(m, l)));
        }
        rows
    };
    Ok(ranks.iter().flat_map(per_rank).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Results table, one row per run.
pub fn results_csv(rows: &[ExperimentResult], bins: usize) -> String {
    let mut out = String::from("model,k,lambda,rmse_weighted");
    for t in 0..bins {
        write!(out, ",rmse_bin_{t}").unwrap();
    }
    out.push_str(",wall_seconds,seed,status\n");
    for r in rows {
        write!(out, "{},{},{},{}", r.model.as_str(), r.rank, fmt_opt(r.lambda), r.rmse.weighted).unwrap();
        for t in 0..bins {
            write!(out, ",{}", fmt_opt(r.rmse.per_bin.get(t).copied().flatten())).unwrap();
        }
        let status = r.status.replace([',', '\n'], ";");
        writeln!(out, ",{:.3},{},{}", r.wall_seconds, r.seed, status).unwrap();
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ExperimentResult], bins: usize) -> Result<()> {
    fs::write(path, results_csv(rows, bins)).map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic socially coupled rating generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub bins: usize,
    pub ratings_per_bin: usize,
    pub trust_edges: usize,
    /// Consensus pull `η` of the step `U ← (I − ηL)U`.
    pub eta: f64,
    /// Rating noise standard deviation.
    pub noise_std: f64,
    pub seed: u64,
    pub dt: f64,
    /// Spread of the initial user factors.
    pub init_std: f64,
    /// Spread of the initial velocities.
    pub velocity_std: f64,
    /// Random-walk noise added to velocities each step.
    pub velocity_noise_std: f64,
    /// Noise added to positions each step.
    pub position_noise_std: f64,
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 300,
            rank: 5,
            bins: 8,
            ratings_per_bin: 750,
            trust_edges: 600,
            eta: 0.05,
            noise_std: 0.5,
            seed: 0,
            dt: 1.0,
            init_std: 1.0,
            velocity_std: 0.2,
            velocity_noise_std: 0.05,
            position_noise_std: 0.0,
            train_fraction: 0.5,
        }
    }
}

/// Generated data with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub ratings: RatingsTimeline,
    pub split: SplitTimeline,
    pub trust: TrustTimeline,
    pub truth_users: Vec<DMatrix<f64>>,
    pub truth_velocities: Vec<DMatrix<f64>>,
    pub truth_items: DMatrix<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    if std == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, std).unwrap();
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Draws a socially coupled synthetic dataset.
///
/// Item factors are fixed; user factors follow
/// `U_{t+1} = (I − ηL)(U_t + dt·U̇_t) + noise` with a random-walk velocity,
/// over one static random trust graph. Observed entries are sampled
/// uniformly without repetition within a bin and split per bin.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    let (m, n, k, bins) = (cfg.users, cfg.items, cfg.rank, cfg.bins);
    if m < 2 || n == 0 || k == 0 || bins == 0 {
        return Err(Error::Config("generator needs ≥2 users and positive items, rank, bins".into()));
    }
    if cfg.ratings_per_bin == 0 || cfg.ratings_per_bin > m * n {
        return Err(Error::Config(format!("ratings_per_bin must be in 1..={}", m * n)));
    }
    if cfg.trust_edges > m * (m - 1) / 2 {
        return Err(Error::Config(format!("at most {} edges fit among {m} users", m * (m - 1) / 2)));
    }
    for (name, v) in [
        ("noise_std", cfg.noise_std),
        ("init_std", cfg.init_std),
        ("velocity_std", cfg.velocity_std),
        ("velocity_noise_std", cfg.velocity_noise_std),
        ("position_noise_std", cfg.position_noise_std),
        ("eta", cfg.eta),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
        }
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {}", cfg.dt)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth_items = gaussian(&mut rng, n, k, 1.0 / (k as f64).sqrt());

    let mut edges = HashSet::with_capacity(cfg.trust_edges);
    while edges.len() < cfg.trust_edges {
        let a = rng.random_range(0..m);
        let b = rng.random_range(0..m);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let graph = TrustGraph::new(m, edges.into_iter().map(|(a, b)| (a, b, 1.0)))?;
    // Gershgorin: λ_max(L) ≤ 2·max degree, so η·max degree ≤ 1 keeps I − ηL
    // within the unit disc
    let max_degree = graph.degrees().into_iter().fold(0.0, f64::max);
    if cfg.eta * max_degree > 1.0 {
        return Err(Error::Config(format!(
            "eta {} too large for maximum degree {max_degree}: consensus step may diverge",
            cfg.eta
        )));
    }
    let laplacian = build_laplacian(&graph);

    let mut u = gaussian(&mut rng, m, k, cfg.init_std);
    let mut udot = gaussian(&mut rng, m, k, cfg.velocity_std);
    let mut truth_users = vec![u.clone()];
    let mut truth_velocities = vec![udot.clone()];
    for _ in 1..bins {
        let moved = &u + &udot * cfg.dt;
        let pulled = &moved - apply_laplacian(&laplacian, &moved)? * cfg.eta;
        u = pulled + gaussian(&mut rng, m, k, cfg.position_noise_std);
        udot = &udot + gaussian(&mut rng, m, k, cfg.velocity_noise_std);
        truth_users.push(u.clone());
        truth_velocities.push(udot.clone());
    }

    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).unwrap());
    let mut per_bin = Vec::with_capacity(bins);
    for (t, ut) in truth_users.iter().enumerate() {
        let mut cells: Vec<usize> = sample(&mut rng, m * n, cfg.ratings_per_bin).into_vec();
        cells.sort_unstable();
        let obs = cells
            .into_iter()
            .map(|cell| {
                let (i, j) = (cell / n, cell % n);
                let clean = ut.row(i).dot(&truth_items.row(j));
                let value = clean + noise.map_or(0.0, |d| d.sample(&mut rng));
                RatingObservation { user: i, item: j, value, bin: t }
            })
            .collect();
        per_bin.push(obs);
    }
    let ratings = RatingsTimeline::new(m, n, per_bin)?;
    let split = split_train_test(&ratings, cfg.train_fraction, cfg.seed)?;
    Ok(SynthData {
        ratings,
        split,
        trust: TrustTimeline::new(m, vec![graph; bins])?,
        truth_users,
        truth_velocities,
        truth_items,
    })
}

fn padded_ids(prefix: char, count: usize) -> IdMap {
    let width = count.saturating_sub(1).to_string().len();
    IdMap::from_ids((0..count).map(|i| format!("{prefix}{i:0width$}")))
}

/// Writes the canonical directory plus `truth_U_<t>.mat` and `truth_V.mat`.
pub fn write_synth_bundle(dir: &Path, data: &SynthData) -> Result<()> {
    let binned = BinnedData {
        ratings: data.ratings.clone(),
        trust: data.trust.clone(),
        users: padded_ids('u', data.ratings.num_users()),
        items: padded_ids('i', data.ratings.num_items()),
    };
    write_canonical(dir, &binned)?;
    for (t, u) in data.truth_users.iter().enumerate() {
        write_matrix(&dir.join(format!("truth_U_{t}.mat")), u)?;
    }
    write_matrix(&dir.join("truth_V.mat"), &data.truth_items)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapStats {
    pub trust_edges: usize,
    pub similarity_edges: usize,
    pub shared: usize,
    /// `|trust ∩ sim| / |trust ∪ sim|`; 1 when both are empty.
    pub jaccard: f64,
}

/// Compares trust edges with a "similar taste" graph among sampled users,
/// where `i ~ j` when `⟨U_i, U_j⟩ > threshold`.
pub fn graph_overlap(graph: &TrustGraph, users: &DMatrix<f64>, threshold: f64, sample_users: usize, seed: u64) -> Result<OverlapStats> {
    if users.nrows() != graph.num_users() {
        return Err(Error::Dimension(format!(
            "factors have {} users, graph {}",
            users.nrows(),
            graph.num_users()
        )));
    }
    let m = graph.num_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, m, sample_users.min(m)).into_vec();
    chosen.sort_unstable();
    let in_sample: HashSet<usize> = chosen.iter().copied().collect();

    let trust: HashSet<(usize, usize)> = graph
        .edges()
        .iter()
        .filter(|e| in_sample.contains(&e.0) && in_sample.contains(&e.1))
        .map(|e| (e.0, e.1))
        .collect();
    let mut similar = HashSet::new();
    for (x, &i) in chosen.iter().enumerate() {
        for &j in &chosen[x + 1..] {
            if users.row(i).dot(&users.row(j)) > threshold {
                similar.insert((i, j));
            }
        }
    }
    let shared = trust.intersection(&similar).count();
    let union = trust.len() + similar.len() - shared;
    Ok(OverlapStats {
        trust_edges: trust.len(),
        similarity_edges: similar.len(),
        shared,
        jaccard: if union == 0 { 1.0 } else { shared as f64 / union as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(bins: Vec<Vec<(usize, usize, f64)>>, m: usize, n: usize) -> RatingsTimeline {
        RatingsTimeline::new(
            m,
            n,
            bins.into_iter()
                .enumerate()
                .map(|(t, b)| b.into_iter().map(|(user, item, value)| RatingObservation { user, item, value, bin: t }).collect())
                .collect(),
        )
        .unwrap()
    }

    fn scalar_factors(values: &[(f64, f64)]) -> FactorTimeline {
        FactorTimeline::new(
            values
                .iter()
                .map(|&(u, v)| FactorPair::new(DMatrix::from_element(1, 1, u), DMatrix::from_element(2, 1, v)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rmse_hand_values() {
        // prediction u·v = 1 for both items, truth (1, 1) → 0
        let f = scalar_factors(&[(1.0, 1.0)]);
        assert_eq!(evaluate_rmse(&f, &tl(vec![vec![(0, 0, 1.0), (0, 1, 1.0)]], 1, 2)).unwrap().weighted, 0.0);

        // predictions [1, 3] vs truth [1, 5]
        let pair = FactorPair::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_row_slice(2, 1, &[1.0, 3.0])).unwrap();
        let f = FactorTimeline::new(vec![pair]).unwrap();
        let r = evaluate_rmse(&f, &tl(vec![vec![(0, 0, 1.0), (0, 1, 5.0)]], 1, 2)).unwrap();
        assert!((r.weighted - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rmse_weights_by_bin_size() {
        // bin 0: one exact prediction; bin 1: three errors of 2 (mse 4)
        let f = FactorTimeline::new(vec![
            FactorPair::new(DMatrix::from_element(3, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            FactorPair::new(DMatrix::from_element(3, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap(),
        ])
        .unwrap();
        let test = tl(vec![vec![(0, 0, 1.0)], vec![(0, 0, 3.0), (1, 0, -1.0), (2, 0, 3.0)]], 3, 1);
        let r = evaluate_rmse(&f, &test).unwrap();
        assert_eq!(r.per_bin, vec![Some(0.0), Some(2.0)]);
        let oracle = ((0.0 * 1.0 + 4.0 * 3.0) / 4.0f64).sqrt();
        assert!((r.weighted - oracle).abs() < 1e-15);
        assert!((r.weighted - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rmse_skips_empty_bins_and_checks_shapes() {
        let f = scalar_factors(&[(1.0, 1.0), (1.0, 1.0)]);
        let r = evaluate_rmse(&f, &tl(vec![vec![(0, 0, 3.0)], vec![]], 1, 2)).unwrap();
        assert_eq!(r.per_bin, vec![Some(2.0), None]);
        assert!(evaluate_rmse(&f, &tl(vec![vec![(0, 0, 3.0)]], 1, 2)).is_err());
        assert!(evaluate_rmse(&f, &tl(vec![vec![], vec![]], 1, 2)).is_err());
    }

    #[test]
    fn rmse_invariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = gaussian(&mut rng, 5, 3, 1.0);
        let v = gaussian(&mut rng, 4, 3, 1.0);
        let q = gaussian(&mut rng, 3, 3, 1.0).qr().q();
        let test = tl(vec![(0..5).flat_map(|i| (0..4).map(move |j| (i, j, (i + j) as f64))).collect()], 5, 4);
        let a = evaluate_rmse(&FactorTimeline::new(vec![FactorPair::new(u.clone(), v.clone()).unwrap()]).unwrap(), &test).unwrap();
        let b = evaluate_rmse(&FactorTimeline::new(vec![FactorPair::new(&u * &q, &v * &q).unwrap()]).unwrap(), &test).unwrap();
        assert!((a.weighted - b.weighted).abs() < 1e-12);
    }

    fn small_synth(seed: u64) -> SynthConfig {
        SynthConfig {
            users: 30,
            items: 25,
            rank: 2,
            bins: 3,
            ratings_per_bin: 200,
            trust_edges: 40,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn synth_without_coupling_is_constant_velocity() {
        let data = synth_generate(&SynthConfig { eta: 0.0, noise_std: 0.0, ..small_synth(1) }).unwrap();
        for t in 0..data.truth_users.len() - 1 {
            let step = &data.truth_users[t + 1] - &data.truth_users[t] - &data.truth_velocities[t];
            assert!(step.amax() <= 1e-14, "{}", step.amax());
        }
        for bin in data.ratings.bins() {
            for o in bin {
                assert_eq!(o.value, data.truth_users[o.bin].row(o.user).dot(&data.truth_items.row(o.item)));
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_well_formed() {
        let a = synth_generate(&small_synth(9)).unwrap();
        let b = synth_generate(&small_synth(9)).unwrap();
        assert_eq!(a.ratings, b.ratings);
        assert_eq!(a.split, b.split);
        assert_eq!(a.trust, b.trust);
        assert_eq!(a.ratings.counts(), vec![200; 3]);
        assert_eq!(a.trust.graph(0).num_edges(), 40);
        assert_eq!(a.split.train.total() + a.split.test.total(), 600);
    }

    #[test]
    fn synth_consensus_contracts_trusted_pairs() {
        let cfg = SynthConfig {
            users: 40,
            trust_edges: 80,
            bins: 30,
            eta: 0.1,
            velocity_std: 0.0,
            velocity_noise_std: 0.0,
            noise_std: 0.0,
            ..small_synth(4)
        };
        let data = synth_generate(&cfg).unwrap();
        let spread = |u: &DMatrix<f64>| -> f64 {
            data.trust.graph(0).edges().iter().map(|&(a, b, _)| (u.row(a) - u.row(b)).norm()).sum()
        };
        let first = spread(&data.truth_users[0]);
        let mid = spread(&data.truth_users[10]);
        let last = spread(&data.truth_users[29]);
        assert!(mid < first && last < mid, "{first} {mid} {last}");
    }

    #[test]
    fn synth_rejects_bad_eta() {
        assert!(synth_generate(&SynthConfig { eta: 0.9, ..small_synth(0) }).is_err());
        assert!(synth_generate(&SynthConfig { ratings_per_bin: 10_000, ..small_synth(0) }).is_err());
    }

    #[test]
    fn overlap_extremes() {
        // users 0 and 1 aligned, 2 orthogonal to both
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let same = TrustGraph::new(3, [(0, 1, 1.0)]).unwrap();
        let s = graph_overlap(&same, &u, 0.5, 3, 0).unwrap();
        assert_eq!((s.shared, s.trust_edges, s.similarity_edges), (1, 1, 1));
        assert_eq!(s.jaccard, 1.0);
        let other = TrustGraph::new(3, [(1, 2, 1.0)]).unwrap();
        assert_eq!(graph_overlap(&other, &u, 0.5, 3, 0).unwrap().jaccard, 0.0);
        assert!(graph_overlap(&other, &DMatrix::zeros(2, 2), 0.5, 3, 0).is_err());
    }

    #[test]
    fn sweep_row_layout() {
        let data = synth_generate(&small_synth(2)).unwrap();
        let cfg = SmootherConfig { max_iter: 50, ..SmootherConfig::with_rank(2) };
        let rows = sweep(&data.split, &data.trust, &[2], &[0.01], &cfg, false).unwrap();
        let kinds: Vec<_> = rows.iter().map(|r| r.model).collect();
        assert_eq!(kinds, vec![ModelKind::Static, ModelKind::Dynamic, ModelKind::DynamicSocial]);
        let csv = results_csv(&rows, 3);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("model,k,lambda,rmse_weighted,rmse_bin_0,rmse_bin_1,rmse_bin_2,wall_seconds,seed,status\n"));
        let parallel = sweep(&data.split, &data.trust, &[2], &[0.01], &cfg, true).unwrap();
        for (a, b) in rows.iter().zip(&parallel) {
            assert_eq!(a.rmse, b.rmse);
            assert_eq!(a.objective_trace, b.objective_trace);
        }
        assert!(sweep(&data.split, &data.trust, &[], &[0.01], &cfg, false).is_err());
    }

    #[test]
    fn sweep_records_failures() {
        let data = synth_generate(&small_synth(2)).unwrap();
        let cfg = SmootherConfig { gamma: -1.0, ..SmootherConfig::with_rank(2) };
        let rows = sweep(&data.split, &data.trust, &[2], &[0.1, 1.0], &cfg, false).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.status.starts_with("error:")));
    }
}
