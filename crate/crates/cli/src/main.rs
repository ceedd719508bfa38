//! `trustdyn` command-line driver.
//!
//! Exit status is 0 on success, 1 on a numerical failure (including a
//! flagged optimizer status) and 2 on bad input: missing or malformed files,
//! invalid flags or inconsistent shapes.

mod settings;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trustdyn::experiment::{
    evaluate_rmse, graph_overlap, smooth, sweep, synth_generate, write_synth_bundle,
    ExperimentResult, ModelKind, RmseReport, SynthConfig,
};
use trustdyn::ingest::{ingest_dumps, read_canonical, split_train_test, write_canonical, FormatDescriptor, SplitTimeline};
use trustdyn::matio::{read_matrix, write_matrix};
use trustdyn::optimizer::{finite_diff_check, write_trace_csv};
use trustdyn::smoother_ops::{objective_and_gradient, SmootherProblem};
use trustdyn::static_factorizer::init_timeline;
use trustdyn::{Error, FactorPair, FactorTimeline, SmootherConfig, TrustTimeline};

use settings::{parse_list, Settings};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_input_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "trustdyn", version, about = "Dynamic matrix factorization with trust-graph smoothing")]
struct Cli {
    /// Flat `key=value` file; keys are long flag names. Flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for the train/test split, factor initialization and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel loops (default: all cores). Results are
    /// reproducible for a fixed value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw rating and trust dumps into a canonical binned directory.
    ///
    /// Ratings rows hold user, item, value and date; trust rows hold two
    /// user ids and a date. Cutoffs is one date per line; bin t holds dates
    /// before cutoff t, the last bin everything after. Writes
    /// `ratings_bin_<t>.tsv`, `trust_bin_<t>.tsv`, `users.map`, `items.map` and
    /// `meta.txt`.
    Ingest(IngestArgs),
    /// Fit independent per-bin static factors and write `U_<t>.mat`, `V_<t>.mat`.
    Factorize(FactorizeArgs),
    /// Smooth user factors over time and write `U_<t>.mat`, `Udot_<t>.mat`,
    /// `V_<t>.mat` and `trace.csv` (iter,f,grad_norm,step).
    Smooth(SmoothArgs),
    /// Test-split RMSE of a factor directory.
    Evaluate(EvaluateArgs),
    /// Static, dynamic and dynamic+social runs over lists of ranks and λ.
    ///
    /// CSV columns: model,k,lambda,rmse_weighted,rmse_bin_0..,wall_seconds,seed,status.
    Sweep(SweepArgs),
    /// Generate a synthetic socially coupled dataset with ground truth.
    ///
    /// Writes the canonical directory plus `truth_U_<t>.mat` and `truth_V.mat`.
    Synth(SynthArgs),
    /// Compare the analytic gradient with central differences.
    Checkgrad(CheckgradArgs),
    /// Jaccard overlap between the trust graph and a taste-similarity graph.
    Overlap(OverlapArgs),
}

/// Matrix files hold `rows cols` on the first line, then one row per line.
#[derive(Args)]
struct ModelArgs {
    /// Latent rank.
    #[arg(long = "k")]
    k: Option<usize>,
    /// Rating noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Time step between bins.
    #[arg(long)]
    dt: Option<f64>,
    /// Frobenius penalty of the static factorization.
    #[arg(long)]
    gamma: Option<f64>,
    /// L-BFGS iteration limit.
    #[arg(long)]
    max_iter: Option<usize>,
    /// L-BFGS stops when ‖g‖/max(1,‖x‖) reaches this.
    #[arg(long)]
    grad_tol: Option<f64>,
    /// L-BFGS history length.
    #[arg(long)]
    lbfgs_memory: Option<usize>,
    /// Alternating sweeps of the static factorizer.
    #[arg(long)]
    als_iters: Option<usize>,
    /// Relative objective change that stops the static factorizer.
    #[arg(long)]
    als_tol: Option<f64>,
    /// Fraction of each bin used for training.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Skip the Procrustes alignment of consecutive static factors.
    #[arg(long)]
    no_align: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Raw ratings file: user, item, value, date per row.
    #[arg(long)]
    ratings: PathBuf,
    /// Raw trust file: truster, trustee, date per row.
    #[arg(long)]
    trust: PathBuf,
    /// Bin boundaries, one date per line in the --date-format.
    #[arg(long)]
    cutoffs: PathBuf,
    /// Keep users with more than this many ratings [default: 10].
    #[arg(long)]
    min_ratings: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Field separator: tab, comma, whitespace or a single character [default: tab].
    #[arg(long)]
    delimiter: Option<String>,
    /// iso (YYYY-MM-DD), days or unix [default: iso].
    #[arg(long)]
    date_format: Option<String>,
    /// Column indices of user,item,value,date in the ratings file [default: 0,1,2,3].
    #[arg(long)]
    rating_columns: Option<String>,
    /// Column indices of user_a,user_b,date in the trust file [default: 0,1,2].
    #[arg(long)]
    trust_columns: Option<String>,
    /// Ignore the first line of both files.
    #[arg(long)]
    skip_header: bool,
}

#[derive(Args)]
struct FactorizeArgs {
    /// Canonical data directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SmoothArgs {
    /// Canonical data directory (ratings_bin_<t>.tsv, trust_bin_<t>.tsv, users.map, items.map, meta.txt).
    #[arg(long)]
    data: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Weight of the trust penalty [default: 0].
    #[arg(long)]
    lambda: Option<f64>,
    /// Build the problem without any trust term.
    #[arg(long)]
    dynamic_only: bool,
    /// Static factors to start from; fitted afresh when absent.
    #[arg(long)]
    factors: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Canonical data directory (ratings_bin_<t>.tsv, trust_bin_<t>.tsv, users.map, items.map, meta.txt).
    #[arg(long)]
    data: PathBuf,
    /// Directory with `U_<t>.mat` and `V_<t>.mat`.
    #[arg(long)]
    factors: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Canonical data directory (ratings_bin_<t>.tsv, trust_bin_<t>.tsv, users.map, items.map, meta.txt).
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated ranks.
    #[arg(long)]
    ks: Option<String>,
    /// Comma-separated social weights.
    #[arg(long)]
    lambdas: Option<String>,
    /// Results CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Number of users [default: 200].
    #[arg(long)]
    users: Option<usize>,
    /// Number of items [default: 300].
    #[arg(long)]
    items: Option<usize>,
    /// True latent rank.
    #[arg(long = "k")]
    k: Option<usize>,
    /// Number of time bins [default: 8].
    #[arg(long)]
    bins: Option<usize>,
    /// Observed cells per bin, split into train and test [default: 750].
    #[arg(long)]
    ratings_per_bin: Option<usize>,
    /// Undirected trust edges [default: 600].
    #[arg(long)]
    trust_edges: Option<usize>,
    /// Consensus pull per step [default: 0.05].
    #[arg(long)]
    eta: Option<f64>,
    /// Rating noise standard deviation [default: 0.5].
    #[arg(long)]
    noise_std: Option<f64>,
    /// Time step between bins [default: 1].
    #[arg(long)]
    dt: Option<f64>,
    /// Spread of the initial user factors [default: 1].
    #[arg(long)]
    init_std: Option<f64>,
    /// Spread of the initial velocities [default: 0.2].
    #[arg(long)]
    velocity_std: Option<f64>,
    /// Random-walk noise on velocities per step [default: 0.05].
    #[arg(long)]
    velocity_noise_std: Option<f64>,
    /// Noise on positions per step [default: 0].
    #[arg(long)]
    position_noise_std: Option<f64>,
    /// Fraction of each bin used for training [default: 0.5].
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct CheckgradArgs {
    /// Canonical data directory; a small synthetic problem is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Weight of the trust penalty [default: 0.1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Central-difference step [default: 1e-5].
    #[arg(long)]
    step: Option<f64>,
    /// Largest acceptable relative error [default: 1e-6].
    #[arg(long)]
    tol: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct OverlapArgs {
    /// Canonical data directory (ratings_bin_<t>.tsv, trust_bin_<t>.tsv, users.map, items.map, meta.txt).
    #[arg(long)]
    data: PathBuf,
    /// Directory with `U_<t>.mat`.
    #[arg(long)]
    factors: PathBuf,
    /// Bin whose graph and factors are compared [default: last].
    #[arg(long)]
    bin: Option<usize>,
    /// Users i, j are similar when ⟨U_i, U_j⟩ exceeds this [default: 0].
    #[arg(long)]
    threshold: Option<f64>,
    /// Users sampled for the comparison [default: 1000].
    #[arg(long)]
    sample: Option<usize>,
}

struct Ctx {
    settings: Settings,
    seed: u64,
}

impl Ctx {
    fn smoother_config(&self, m: &ModelArgs, lambda: f64) -> CliResult<SmootherConfig> {
        let s = &self.settings;
        let d = SmootherConfig::default();
        let config = SmootherConfig {
            rank: s.pick(m.k, "k", d.rank)?,
            dt: s.pick(m.dt, "dt", d.dt)?,
            sigma: s.pick(m.sigma, "sigma", d.sigma)?,
            lambda,
            gamma: s.pick(m.gamma, "gamma", d.gamma)?,
            max_iter: s.pick(m.max_iter, "max-iter", d.max_iter)?,
            lbfgs_memory: s.pick(m.lbfgs_memory, "lbfgs-memory", d.lbfgs_memory)?,
            grad_tol: s.pick(m.grad_tol, "grad-tol", d.grad_tol)?,
            align_factors: !s.switch(m.no_align, "no-align")?,
            seed: self.seed,
            als_iters: s.pick(m.als_iters, "als-iters", d.als_iters)?,
            als_tol: s.pick(m.als_tol, "als-tol", d.als_tol)?,
        };
        config.validate()?;
        Ok(config)
    }

    fn train_fraction(&self, flag: Option<f64>) -> CliResult<f64> {
        self.settings.pick(flag, "train-fraction", SynthConfig::default().train_fraction)
    }

    fn load(&self, dir: &Path, model: &ModelArgs) -> CliResult<(SplitTimeline, TrustTimeline)> {
        let data = read_canonical(dir)?;
        let split = split_train_test(&data.ratings, self.train_fraction(model.train_fraction)?, self.seed)?;
        Ok((split, data.trust))
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_factors(dir: &Path, factors: &FactorTimeline) -> CliResult {
    create_dir(dir)?;
    for (t, pair) in factors.pairs().iter().enumerate() {
        write_matrix(&dir.join(format!("U_{t}.mat")), &pair.users)?;
        write_matrix(&dir.join(format!("V_{t}.mat")), &pair.items)?;
    }
    Ok(())
}

fn read_factors(dir: &Path, bins: usize) -> CliResult<FactorTimeline> {
    let pairs = (0..bins)
        .map(|t| {
            let u = read_matrix(&dir.join(format!("U_{t}.mat")))?;
            let v = read_matrix(&dir.join(format!("V_{t}.mat")))?;
            FactorPair::new(u, v)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(FactorTimeline::new(pairs)?)
}

fn check_shape(factors: &FactorTimeline, split: &SplitTimeline) -> CliResult {
    let (m, n, _) = factors.shape();
    if (m, n) != (split.train.num_users(), split.train.num_items()) {
        return Err(Failure::input(format!(
            "factors are {m} users × {n} items, data has {} × {}",
            split.train.num_users(),
            split.train.num_items()
        )));
    }
    Ok(())
}

fn rmse_summary(rmse: &RmseReport) -> String {
    let bins = rmse
        .per_bin
        .iter()
        .map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into()))
        .collect::<Vec<_>>()
        .join(" ");
    format!("rmse {:.6} (per bin: {bins})", rmse.weighted)
}

fn descriptor(base: FormatDescriptor, delimiter: &str, date: &str, columns: Option<String>, skip_header: bool) -> CliResult<FormatDescriptor> {
    Ok(FormatDescriptor {
        delimiter: delimiter.parse()?,
        date_format: date.parse()?,
        columns: match columns {
            Some(c) => parse_list(&c, "columns")?,
            None => base.columns,
        },
        skip_header,
    })
}

fn cmd_ingest(ctx: &Ctx, a: IngestArgs) -> CliResult {
    let s = &ctx.settings;
    let delimiter = s.pick(a.delimiter, "delimiter", "tab".to_string())?;
    let date = s.pick(a.date_format, "date-format", "iso".to_string())?;
    let skip = s.switch(a.skip_header, "skip-header")?;
    let rating_format = descriptor(
        FormatDescriptor::ratings_tsv(),
        &delimiter,
        &date,
        s.pick_opt(a.rating_columns, "rating-columns")?,
        skip,
    )?;
    let trust_format = descriptor(
        FormatDescriptor::trust_tsv(),
        &delimiter,
        &date,
        s.pick_opt(a.trust_columns, "trust-columns")?,
        skip,
    )?;
    let min = s.pick(a.min_ratings, "min-ratings", 10)?;
    let (data, summary) = ingest_dumps(&a.ratings, &a.trust, &a.cutoffs, min, &rating_format, &trust_format)?;
    write_canonical(&a.out, &data)?;
    println!(
        "m={} n={} N={} ratings={} edges={}",
        summary.users, summary.items, summary.bins, summary.ratings, summary.edges
    );
    if summary.malformed_ratings + summary.malformed_trust > 0 {
        println!(
            "skipped malformed rows: {} ratings, {} trust",
            summary.malformed_ratings, summary.malformed_trust
        );
    }
    Ok(())
}

fn cmd_factorize(ctx: &Ctx, a: FactorizeArgs) -> CliResult {
    let config = ctx.smoother_config(&a.model, 0.0)?;
    let (split, _) = ctx.load(&a.data, &a.model)?;
    let factors = init_timeline(&split, &config)?;
    write_factors(&a.out, &factors)?;
    println!("static k={}: {}", config.rank, rmse_summary(&evaluate_rmse(&factors, &split.test)?));
    Ok(())
}

fn cmd_smooth(ctx: &Ctx, a: SmoothArgs) -> CliResult {
    let lambda = ctx.settings.pick(a.lambda, "lambda", 0.0)?;
    let dynamic_only = ctx.settings.switch(a.dynamic_only, "dynamic-only")?;
    if dynamic_only && lambda != 0.0 {
        return Err(Failure::input("--dynamic-only has no trust term; drop --lambda"));
    }
    let config = ctx.smoother_config(&a.model, lambda)?;
    let (split, trust) = ctx.load(&a.data, &a.model)?;
    let factors = match &a.factors {
        Some(dir) => read_factors(dir, split.train.num_bins())?,
        None => init_timeline(&split, &config)?,
    };
    check_shape(&factors, &split)?;
    let trust = (!dynamic_only).then_some(&trust);
    let out = smooth(&split.train, trust, &factors, &config)?;

    write_factors(&a.out, &out.factors)?;
    for t in 0..out.state.num_bins() {
        let (velocity, _) = out.state.unpack(t)?;
        write_matrix(&a.out.join(format!("Udot_{t}.mat")), &velocity)?;
    }
    write_trace_csv(&a.out.join("trace.csv"), &out.optimizer.trace)?;

    let model = if trust.is_some() && lambda != 0.0 {
        ModelKind::DynamicSocial
    } else {
        ModelKind::Dynamic
    };
    let rmse = evaluate_rmse(&out.factors, &split.test)?;
    println!(
        "{} k={} lambda={lambda}: {} f={:.12e} iters={} status={}",
        model.as_str(),
        config.rank,
        rmse_summary(&rmse),
        out.optimizer.f,
        out.optimizer.trace.len() - 1,
        out.optimizer.status.as_str()
    );
    if out.optimizer.status.is_failure() {
        return Err(Failure::numerical(format!("optimizer stopped: {}", out.optimizer.status.as_str())));
    }
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> CliResult {
    let (split, _) = ctx.load(&a.data, &a.model)?;
    let factors = read_factors(&a.factors, split.test.num_bins())?;
    check_shape(&factors, &split)?;
    println!("{}", rmse_summary(&evaluate_rmse(&factors, &split.test)?));
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> CliResult {
    let ks: Vec<usize> = parse_list(&ctx.settings.pick(a.ks, "ks", "5".into())?, "ks")?;
    let lambdas: Vec<f64> = parse_list(
        &ctx.settings.pick(a.lambdas, "lambdas", "0.00001,0.0001,0.001,0.01,0.1,1".into())?,
        "lambdas",
    )?;
    let config = ctx.smoother_config(&a.model, 0.0)?;
    let (split, trust) = ctx.load(&a.data, &a.model)?;
    let rows = sweep(&split, &trust, &ks, &lambdas, &config, true)?;
    let bins = split.train.num_bins();
    write_text(&a.out, &trustdyn::experiment::results_csv(&rows, bins))?;
    print!("{}", sweep_table(&rows));
    let failed: Vec<&ExperimentResult> = rows.iter().filter(|r| r.status != "converged" && r.status != "max_iter" && r.status != "ok").collect();
    if !failed.is_empty() {
        return Err(Failure::numerical(format!("{} of {} runs failed", failed.len(), rows.len())));
    }
    Ok(())
}

fn sweep_table(rows: &[ExperimentResult]) -> String {
    let mut out = format!("{:<15} {:>3} {:>8} {:>10}  status\n", "model", "k", "lambda", "rmse");
    for r in rows {
        let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        writeln!(out, "{:<15} {:>3} {:>8} {:>10.6}  {}", r.model.as_str(), r.rank, lambda, r.weighted_rmse(), r.status).unwrap();
    }
    out
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> CliResult {
    let s = &ctx.settings;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        users: s.pick(a.users, "users", d.users)?,
        items: s.pick(a.items, "items", d.items)?,
        rank: s.pick(a.k, "k", d.rank)?,
        bins: s.pick(a.bins, "bins", d.bins)?,
        ratings_per_bin: s.pick(a.ratings_per_bin, "ratings-per-bin", d.ratings_per_bin)?,
        trust_edges: s.pick(a.trust_edges, "trust-edges", d.trust_edges)?,
        eta: s.pick(a.eta, "eta", d.eta)?,
        noise_std: s.pick(a.noise_std, "noise-std", d.noise_std)?,
        seed: ctx.seed,
        dt: s.pick(a.dt, "dt", d.dt)?,
        init_std: s.pick(a.init_std, "init-std", d.init_std)?,
        velocity_std: s.pick(a.velocity_std, "velocity-std", d.velocity_std)?,
        velocity_noise_std: s.pick(a.velocity_noise_std, "velocity-noise-std", d.velocity_noise_std)?,
        position_noise_std: s.pick(a.position_noise_std, "position-noise-std", d.position_noise_std)?,
        train_fraction: ctx.train_fraction(a.train_fraction)?,
    };
    let data = synth_generate(&cfg)?;
    create_dir(&a.out)?;
    write_synth_bundle(&a.out, &data)?;
    println!(
        "m={} n={} N={} ratings={} edges={}",
        cfg.users,
        cfg.items,
        cfg.bins,
        data.ratings.total(),
        data.trust.graph(cfg.bins - 1).num_edges()
    );
    Ok(())
}

fn cmd_checkgrad(ctx: &Ctx, a: CheckgradArgs) -> CliResult {
    let s = &ctx.settings;
    let lambda = s.pick(a.lambda, "lambda", 0.1)?;
    let step = s.pick(a.step, "step", 1e-5)?;
    let tol = s.pick(a.tol, "tol", 1e-6)?;
    let mut config = ctx.smoother_config(&a.model, lambda)?;
    let (split, trust) = match &a.data {
        Some(dir) => ctx.load(dir, &a.model)?,
        None => {
            config.rank = s.pick(a.model.k, "k", 3)?;
            let data = synth_generate(&SynthConfig {
                users: 30,
                items: 20,
                rank: config.rank,
                bins: 4,
                ratings_per_bin: 150,
                trust_edges: 40,
                seed: ctx.seed,
                train_fraction: ctx.train_fraction(a.model.train_fraction)?,
                ..SynthConfig::default()
            })?;
            (data.split, data.trust)
        }
    };
    let factors = init_timeline(&split, &config)?;
    let problem = SmootherProblem::new(&split.train, &factors, &trust, &config)?;
    // probe away from the warm start so that every term is active
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let x: Vec<f64> = problem
        .initial_state()
        .into_vec()
        .into_iter()
        .map(|v| v + Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let err = finite_diff_check(|x| objective_and_gradient(&problem, x), &x, step)?;
    println!("max relative gradient error {err:.3e} over {} coordinates (tol {tol:e})", x.len());
    if !(err <= tol) {
        return Err(Failure::numerical(format!("gradient error {err:.3e} exceeds {tol:e}")));
    }
    Ok(())
}

fn cmd_overlap(ctx: &Ctx, a: OverlapArgs) -> CliResult {
    let s = &ctx.settings;
    let data = read_canonical(&a.data)?;
    let bins = data.ratings.num_bins();
    let bin = s.pick(a.bin, "bin", bins - 1)?;
    if bin >= bins {
        return Err(Failure::input(format!("bin {bin} out of range, data has {bins}")));
    }
    let users = read_matrix(&a.factors.join(format!("U_{bin}.mat")))?;
    let stats = graph_overlap(
        data.trust.graph(bin),
        &users,
        s.pick(a.threshold, "threshold", 0.0)?,
        s.pick(a.sample, "sample", 1000)?,
        ctx.seed,
    )?;
    println!(
        "bin {bin}: trust edges {} similarity edges {} shared {} jaccard {:.6}",
        stats.trust_edges, stats.similarity_edges, stats.shared, stats.jaccard
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.pick(cli.seed, "seed", 0)?;
    if let Some(threads) = settings.pick_opt(cli.threads, "threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::input(format!("--threads: {e}")))?;
    }
    let ctx = Ctx { settings, seed };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Factorize(a) => cmd_factorize(&ctx, a),
        Command::Smooth(a) => cmd_smooth(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Checkgrad(a) => cmd_checkgrad(&ctx, a),
        Command::Overlap(a) => cmd_overlap(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
