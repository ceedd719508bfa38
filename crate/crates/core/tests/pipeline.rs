use std::fs;
use std::path::Path;

use trustdyn::experiment::*;
use trustdyn::ingest::*;
use trustdyn::matio::read_matrix;
use trustdyn::static_factorizer::init_timeline;
use trustdyn::SmootherConfig;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn raw_dumps_to_canonical_directory_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = write(
        dir.path(),
        "ratings.tsv",
        "# user item value date\n\
         alice\tbook\t4\t2001-01-10\n\
         alice\tfilm\t2\t2001-03-01\n\
         alice\tbook\t5\t2001-01-20\n\
         bob\tbook\t3\t2001-02-15\n\
         bob\tsong\t1\t2001-03-20\n\
         carol\tsong\t5\t2001-01-05\n\
         carol\tfilm\tnot-a-number\t2001-01-05\n\
         carol\tfilm\t4\t2001-02-01\n",
    );
    let trust = write(
        dir.path(),
        "trust.tsv",
        "alice\tbob\t2001-01-01\nbob\talice\t2000-12-01\ncarol\tcarol\t2001-01-01\nbob\tcarol\t2001-02-20\ncarol\tdave\t2001-01-01\n",
    );
    let cutoffs = write(dir.path(), "cutoffs.txt", "2001-02-01\n2001-03-01\n");

    let parsed = parse_ratings(&ratings, &FormatDescriptor::ratings_tsv()).unwrap();
    assert_eq!((parsed.records.len(), parsed.malformed), (7, 1));
    assert_eq!(parsed.diagnostics[0].0, 8);
    let edges = parse_trust(&trust, &FormatDescriptor::trust_tsv()).unwrap();
    let cut = read_cutoffs(&cutoffs).unwrap();
    let kept = filter_min_ratings(parsed.records, 1);
    assert_eq!(kept.len(), 7);

    let data = bin_timelines(&kept, &edges.records, &cut).unwrap();
    assert_eq!(data.ratings.num_bins(), 3);
    assert_eq!(data.ratings.counts(), vec![2, 2, 2]);
    // the duplicate (alice, book) in bin 0 keeps the later rating
    let (alice, book) = (data.users.get("alice").unwrap(), data.items.get("book").unwrap());
    let first = data.ratings.bin(0).iter().find(|o| o.user == alice && o.item == book).unwrap();
    assert_eq!(first.value, 5.0);
    // alice–bob from bin 0 on, bob–carol joins in bin 1; dave is unknown
    assert_eq!(data.trust.graph(0).num_edges(), 1);
    assert_eq!(data.trust.graph(1).num_edges(), 2);
    assert_eq!(data.trust.graph(2).num_edges(), 2);

    let out = dir.path().join("canonical");
    write_canonical(&out, &data).unwrap();
    let meta = fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.starts_with("m\t3\nn\t3\nN\t3\n"), "{meta}");
    assert_eq!(read_canonical(&out).unwrap(), data);
}

fn small() -> SynthConfig {
    SynthConfig {
        users: 40,
        items: 30,
        rank: 2,
        bins: 4,
        ratings_per_bin: 360,
        trust_edges: 40,
        seed: 5,
        ..SynthConfig::default()
    }
}

fn config() -> SmootherConfig {
    SmootherConfig {
        sigma: 2.0,
        gamma: 3.0,
        max_iter: 300,
        ..SmootherConfig::with_rank(2)
    }
}

#[test]
fn static_recovers_noiseless_low_rank_data() {
    // half the cells observed in training; with γ much smaller than this
    // alternating minimization often stalls in a poor stationary point
    let data = synth_generate(&SynthConfig {
        users: 60,
        items: 50,
        eta: 0.0,
        noise_std: 0.0,
        ratings_per_bin: 3000,
        ..small()
    })
    .unwrap();
    let cfg = SmootherConfig {
        gamma: 0.01,
        als_iters: 2000,
        als_tol: 1e-12,
        ..config()
    };
    let r = run_static(&data.split, &cfg).unwrap();
    assert!(r.weighted_rmse() <= 0.05, "{}", r.weighted_rmse());
}

#[test]
fn runs_are_deterministic() {
    let data = synth_generate(&small()).unwrap();
    let a = run_static(&data.split, &config()).unwrap();
    let b = run_static(&data.split, &config()).unwrap();
    assert_eq!(a.rmse, b.rmse);
    let a = run_dynamic(&data.split, &data.trust, &config(), 0.1).unwrap();
    let b = run_dynamic(&data.split, &data.trust, &config(), 0.1).unwrap();
    assert_eq!(a.rmse, b.rmse);
    assert_eq!(a.objective_trace, b.objective_trace);
}

#[test]
fn zero_lambda_matches_social_free_build() {
    let data = synth_generate(&small()).unwrap();
    let factors = init_timeline(&data.split, &config()).unwrap();
    let with = run_dynamic_with_factors(&data.split, Some(&data.trust), &factors, &config(), 0.0).unwrap();
    let without = run_dynamic_with_factors(&data.split, None, &factors, &config(), 0.0).unwrap();
    assert_eq!(with.objective_trace, without.objective_trace);
    assert_eq!(with.rmse, without.rmse);
}

#[test]
fn tiny_lambda_is_close_to_dynamic() {
    let data = synth_generate(&small()).unwrap();
    let rows = sweep(&data.split, &data.trust, &[2], &[1e-5], &config(), false).unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows[1].weighted_rmse() - rows[2].weighted_rmse()).abs() <= 1e-3);
}

#[test]
fn full_grid_row_count() {
    let data = synth_generate(&SynthConfig { bins: 2, ..small() }).unwrap();
    let cfg = SmootherConfig { max_iter: 20, ..config() };
    let rows = sweep(&data.split, &data.trust, &[1, 2, 3, 4], &[1e-5, 1e-4, 1e-3, 0.01, 0.1, 1.0], &cfg, true).unwrap();
    assert_eq!(rows.len(), 32);
    assert_eq!(rows.iter().filter(|r| r.model == ModelKind::DynamicSocial).count(), 24);
}

#[test]
fn synthetic_bundle_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(&small()).unwrap();
    write_synth_bundle(dir.path(), &data).unwrap();
    let back = read_canonical(dir.path()).unwrap();
    assert_eq!(back.ratings, data.ratings);
    assert_eq!(back.trust, data.trust);
    assert_eq!(read_matrix(&dir.path().join("truth_V.mat")).unwrap(), data.truth_items);
    assert_eq!(read_matrix(&dir.path().join("truth_U_3.mat")).unwrap(), data.truth_users[3]);
}
