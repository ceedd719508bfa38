//! Reading ratings and trust dumps, time binning, user filtering and the
//! per-bin train/test split.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{RatingObservation, RatingsTimeline, TrustGraph, TrustTimeline};
use crate::error::{Error, Result};

/// A rating as it appears in the source dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user_id: String,
    pub item_id: String,
    pub value: f64,
    /// Days since 1970-01-01.
    pub timestamp: i64,
}

/// A declared trust relationship; direction is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrustEdge {
    pub user_a: String,
    pub user_b: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
    Whitespace,
    Char(char),
}

impl Delimiter {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match *self {
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
        }
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "\\t" | "\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            "whitespace" | "space" => Ok(Delimiter::Whitespace),
            other => {
                let mut chars = other.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(Delimiter::Char(c)),
                    _ => Err(Error::Config(format!("unknown delimiter `{other}`"))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateFormat {
    /// `YYYY-MM-DD`, optionally followed by a time which is ignored.
    Iso,
    /// Integer days since the Unix epoch.
    Days,
    /// Integer seconds since the Unix epoch, floored to days.
    UnixSeconds,
}

impl FromStr for DateFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" => Ok(DateFormat::Iso),
            "days" => Ok(DateFormat::Days),
            "unix" | "seconds" => Ok(DateFormat::UnixSeconds),
            other => Err(Error::Config(format!("unknown date format `{other}`"))),
        }
    }
}

pub fn parse_date(field: &str, format: DateFormat) -> std::result::Result<i64, String> {
    match format {
        DateFormat::Iso => {
            let day = field.get(..10).unwrap_or(field);
            if field.len() > 10 && !matches!(field.as_bytes()[10], b'T' | b' ') {
                return Err(format!("bad date `{field}`"));
            }
            let date = NaiveDate::parse_from_str(day, "%Y-%m-%d")
                .map_err(|e| format!("bad date `{field}`: {e}"))?;
            let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
            Ok((date - epoch).num_days())
        }
        DateFormat::Days => field.parse().map_err(|e| format!("bad day count `{field}`: {e}")),
        DateFormat::UnixSeconds => field
            .parse::<i64>()
            .map(|s| s.div_euclid(86_400))
            .map_err(|e| format!("bad timestamp `{field}`: {e}")),
    }
}

/// Where each logical field lives in a delimited line.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatDescriptor {
    pub delimiter: Delimiter,
    /// Column index of each logical field: `(user, item, value, date)` for
    /// ratings, `(user_a, user_b, date)` for trust.
    pub columns: Vec<usize>,
    pub date_format: DateFormat,
    pub skip_header: bool,
}

impl FormatDescriptor {
    pub fn ratings_tsv() -> Self {
        Self {
            delimiter: Delimiter::Tab,
            columns: vec![0, 1, 2, 3],
            date_format: DateFormat::Iso,
            skip_header: false,
        }
    }

    pub fn trust_tsv() -> Self {
        Self {
            delimiter: Delimiter::Tab,
            columns: vec![0, 1, 2],
            date_format: DateFormat::Iso,
            skip_header: false,
        }
    }

    fn fields<'a>(&self, line: &'a str, expected: usize) -> std::result::Result<Vec<&'a str>, String> {
        if self.columns.len() != expected {
            return Err(format!(
                "descriptor maps {} columns, need {expected}",
                self.columns.len()
            ));
        }
        let parts = self.delimiter.split(line);
        self.columns
            .iter()
            .map(|&c| {
                parts
                    .get(c)
                    .copied()
                    .filter(|f| !f.is_empty())
                    .ok_or_else(|| format!("missing column {c}"))
            })
            .collect()
    }
}

/// Records parsed from a file plus bookkeeping about rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    pub malformed: usize,
    /// Line numbers and messages of the first few malformed rows.
    pub diagnostics: Vec<(usize, String)>,
    /// Well-formed rows discarded by a rule (self loops, duplicates).
    pub dropped: usize,
}

const MAX_DIAGNOSTICS: usize = 5;

fn parse_lines<T>(
    path: &Path,
    descriptor: &FormatDescriptor,
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<ParseOutcome<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = ParseOutcome {
        records: Vec::new(),
        malformed: 0,
        diagnostics: Vec::new(),
        dropped: 0,
    };
    let mut total = 0;
    let mut header_pending = descriptor.skip_header;
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        total += 1;
        match parse(line) {
            Ok(rec) => out.records.push(rec),
            Err(msg) => {
                out.malformed += 1;
                if out.diagnostics.len() < MAX_DIAGNOSTICS {
                    out.diagnostics.push((idx + 1, msg));
                }
            }
        }
    }
    if total > 0 && 2 * out.malformed > total {
        let (line, message) = out.diagnostics[0].clone();
        return Err(Error::Format {
            path: path.to_path_buf(),
            malformed: out.malformed,
            total,
            line,
            message,
        });
    }
    for (line, msg) in &out.diagnostics {
        log::warn!("{}:{line}: skipped malformed row: {msg}", path.display());
    }
    Ok(out)
}

pub fn parse_ratings(path: &Path, descriptor: &FormatDescriptor) -> Result<ParseOutcome<RawRating>> {
    parse_lines(path, descriptor, |line| {
        let f = descriptor.fields(line, 4)?;
        let value: f64 = f[2].parse().map_err(|e| format!("bad rating `{}`: {e}", f[2]))?;
        if !value.is_finite() {
            return Err(format!("non-finite rating `{}`", f[2]));
        }
        Ok(RawRating {
            user_id: f[0].to_string(),
            item_id: f[1].to_string(),
            value,
            timestamp: parse_date(f[3], descriptor.date_format)?,
        })
    })
}

/// Parses trust edges. Self loops are dropped and repeated undirected pairs
/// collapse to one edge carrying the earliest date, in first-seen order.
pub fn parse_trust(path: &Path, descriptor: &FormatDescriptor) -> Result<ParseOutcome<RawTrustEdge>> {
    let parsed = parse_lines(path, descriptor, |line| {
        let f = descriptor.fields(line, 3)?;
        Ok(RawTrustEdge {
            user_a: f[0].to_string(),
            user_b: f[1].to_string(),
            timestamp: parse_date(f[2], descriptor.date_format)?,
        })
    })?;
    let before = parsed.records.len();
    let records = dedup_edges(parsed.records);
    Ok(ParseOutcome {
        dropped: before - records.len(),
        records,
        ..parsed
    })
}

fn dedup_edges(edges: Vec<RawTrustEdge>) -> Vec<RawTrustEdge> {
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<RawTrustEdge> = Vec::new();
    for e in edges {
        if e.user_a == e.user_b {
            continue;
        }
        let key = if e.user_a < e.user_b {
            (e.user_a.clone(), e.user_b.clone())
        } else {
            (e.user_b.clone(), e.user_a.clone())
        };
        match slot.get(&key) {
            Some(&i) => out[i].timestamp = out[i].timestamp.min(e.timestamp),
            None => {
                slot.insert(key, out.len());
                out.push(e);
            }
        }
    }
    out
}

/// Keeps ratings of users with strictly more than `threshold` ratings.
pub fn filter_min_ratings(ratings: Vec<RawRating>, threshold: usize) -> Vec<RawRating> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &ratings {
        *counts.entry(r.user_id.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = ratings
        .iter()
        .map(|r| counts[r.user_id.as_str()] > threshold)
        .collect();
    ratings
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

/// Bijection between external string ids and dense indices, ordered
/// lexicographically by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut ids: Vec<String> = ids.into_iter().collect();
        ids.sort();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    fn from_pairs(pairs: Vec<(String, usize)>) -> std::result::Result<Self, String> {
        let n = pairs.len();
        let mut ids = vec![None; n];
        for (id, i) in pairs {
            let slot = ids
                .get_mut(i)
                .ok_or_else(|| format!("index {i} out of range for {n} ids"))?;
            if slot.replace(id).is_some() {
                return Err(format!("index {i} assigned twice"));
            }
        }
        let ids: Vec<String> = ids.into_iter().map(Option::unwrap).collect();
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if index.len() != n {
            return Err("repeated id".into());
        }
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }
}

/// Output of [`bin_timelines`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedData {
    pub ratings: RatingsTimeline,
    pub trust: TrustTimeline,
    pub users: IdMap,
    pub items: IdMap,
}

/// Index of the bin containing `timestamp`: the number of cutoffs `≤ timestamp`.
pub fn bin_of(cutoffs: &[i64], timestamp: i64) -> usize {
    cutoffs.partition_point(|&c| c <= timestamp)
}

/// Assigns ratings and trust edges to `cutoffs.len() + 1` bins.
///
/// Users and items are those appearing in `ratings`; trust edges touching
/// anyone else are discarded. Within a bin a repeated (user, item) pair keeps
/// the most recent rating (later file position wins ties). Trust graphs are
/// cumulative: bin `t` holds every edge created in bins `0..=t`, with unit
/// weight.
pub fn bin_timelines(ratings: &[RawRating], edges: &[RawTrustEdge], cutoffs: &[i64]) -> Result<BinnedData> {
    if let Some(w) = cutoffs.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Input(format!(
            "cutoffs must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    let bins = cutoffs.len() + 1;
    let users = IdMap::from_ids(ratings.iter().map(|r| r.user_id.clone()));
    let items = IdMap::from_ids(ratings.iter().map(|r| r.item_id.clone()));

    let mut latest: HashMap<(usize, usize, usize), (i64, usize)> = HashMap::new();
    for (pos, r) in ratings.iter().enumerate() {
        let key = (
            bin_of(cutoffs, r.timestamp),
            users.get(&r.user_id).unwrap(),
            items.get(&r.item_id).unwrap(),
        );
        let entry = latest.entry(key).or_insert((r.timestamp, pos));
        if r.timestamp >= entry.0 {
            *entry = (r.timestamp, pos);
        }
    }
    let mut per_bin: Vec<Vec<RatingObservation>> = vec![Vec::new(); bins];
    for ((bin, user, item), (_, pos)) in latest {
        per_bin[bin].push(RatingObservation {
            user,
            item,
            value: ratings[pos].value,
            bin,
        });
    }
    for bin in &mut per_bin {
        bin.sort_by_key(|o| (o.user, o.item));
    }
    let ratings_tl = RatingsTimeline::new(users.len(), items.len(), per_bin)?;

    let mut created: HashMap<(usize, usize), usize> = HashMap::new();
    for e in edges {
        let (Some(a), Some(b)) = (users.get(&e.user_a), users.get(&e.user_b)) else {
            continue;
        };
        if a == b {
            continue;
        }
        let bin = bin_of(cutoffs, e.timestamp);
        created
            .entry((a.min(b), a.max(b)))
            .and_modify(|t| *t = (*t).min(bin))
            .or_insert(bin);
    }
    let graphs = (0..bins)
        .map(|t| {
            TrustGraph::new(
                users.len(),
                created
                    .iter()
                    .filter(|&(_, &b)| b <= t)
                    .map(|(&(a, b), _)| (a, b, 1.0)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let trust = TrustTimeline::new(users.len(), graphs)?;
    Ok(BinnedData {
        ratings: ratings_tl,
        trust,
        users,
        items,
    })
}

/// Reads a cutoffs file: one integer day count (or ISO date) per line.
pub fn read_cutoffs(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value = line
            .parse::<i64>()
            .or_else(|_| parse_date(line, DateFormat::Iso))
            .map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            })?;
        out.push(value);
    }
    if let Some(pos) = out.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: pos + 2,
            message: "cutoffs must be strictly increasing".into(),
        });
    }
    Ok(out)
}

/// Ratings divided into disjoint train and test parts within every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTimeline {
    pub train: RatingsTimeline,
    pub test: RatingsTimeline,
    pub seed: u64,
}

/// Seeded per-bin split: a uniform shuffle sends `⌈fraction·p_t⌉`
/// observations to train and the rest to test. Both halves keep the
/// original within-bin order.
pub fn split_train_test(timeline: &RatingsTimeline, fraction: f64, seed: u64) -> Result<SplitTimeline> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(timeline.num_bins());
    let mut test = Vec::with_capacity(timeline.num_bins());
    for (t, bin) in timeline.bins().iter().enumerate() {
        if bin.is_empty() {
            log::warn!("bin {t} has no ratings; train and test are empty");
        }
        let mut order: Vec<usize> = (0..bin.len()).collect();
        order.shuffle(&mut rng);
        let n_train = (fraction * bin.len() as f64).ceil() as usize;
        let mut in_train = vec![false; bin.len()];
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
        let (tr, te): (Vec<_>, Vec<_>) = bin.iter().zip(&in_train).partition(|(_, &flag)| flag);
        train.push(tr.into_iter().map(|(o, _)| *o).collect());
        test.push(te.into_iter().map(|(o, _)| *o).collect());
    }
    let (m, n) = (timeline.num_users(), timeline.num_items());
    Ok(SplitTimeline {
        train: RatingsTimeline::new(m, n, train)?,
        test: RatingsTimeline::new(m, n, test)?,
        seed,
    })
}

fn write_file(path: PathBuf, contents: String) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes the canonical binned directory: per-bin rating and cumulative trust
/// files with dense indices, the two id maps, and `meta.txt`.
pub fn write_canonical(dir: &Path, data: &BinnedData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tl = &data.ratings;
    for t in 0..tl.num_bins() {
        let mut s = String::new();
        for o in tl.bin(t) {
            writeln!(s, "{}\t{}\t{}", o.user, o.item, o.value).unwrap();
        }
        write_file(dir.join(format!("ratings_bin_{t}.tsv")), s)?;
        let mut s = String::new();
        for &(a, b, w) in data.trust.graph(t).edges() {
            writeln!(s, "{a}\t{b}\t{w}").unwrap();
        }
        write_file(dir.join(format!("trust_bin_{t}.tsv")), s)?;
    }
    for (name, map) in [("users.map", &data.users), ("items.map", &data.items)] {
        let mut s = String::new();
        for (i, id) in map.ids.iter().enumerate() {
            writeln!(s, "{id}\t{i}").unwrap();
        }
        write_file(dir.join(name), s)?;
    }
    let meta = format!(
        "m\t{}\nn\t{}\nN\t{}\np_t\t{}\nedges_t\t{}\n",
        tl.num_users(),
        tl.num_items(),
        tl.num_bins(),
        join(tl.counts()),
        join(data.trust.graphs().iter().map(TrustGraph::num_edges)),
    );
    write_file(dir.join("meta.txt"), meta)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_tsv_rows(path: &Path, width: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected {width} tab-separated fields, got {}", fields.len()),
            });
        }
        rows.push((idx + 1, fields));
    }
    Ok(rows)
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e: T::Err| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad field `{field}`: {e}"),
    })
}

/// Reads a directory written by [`write_canonical`].
pub fn read_canonical(dir: &Path) -> Result<BinnedData> {
    let meta_path = dir.join("meta.txt");
    let mut meta = HashMap::new();
    for (line, fields) in parse_tsv_rows(&meta_path, 2)? {
        meta.insert(fields[0].clone(), (line, fields[1].clone()));
    }
    let get = |key: &str| -> Result<usize> {
        let (line, v) = meta.get(key).ok_or_else(|| Error::Parse {
            path: meta_path.clone(),
            line: 0,
            message: format!("missing key `{key}`"),
        })?;
        parse_field(&meta_path, *line, v)
    };
    let (m, n, bins) = (get("m")?, get("n")?, get("N")?);

    let mut per_bin = Vec::with_capacity(bins);
    let mut graphs = Vec::with_capacity(bins);
    for t in 0..bins {
        let path = dir.join(format!("ratings_bin_{t}.tsv"));
        let mut obs = Vec::new();
        for (line, f) in parse_tsv_rows(&path, 3)? {
            obs.push(RatingObservation {
                user: parse_field(&path, line, &f[0])?,
                item: parse_field(&path, line, &f[1])?,
                value: parse_field(&path, line, &f[2])?,
                bin: t,
            });
        }
        per_bin.push(obs);
        let path = dir.join(format!("trust_bin_{t}.tsv"));
        let mut edges = Vec::new();
        for (line, f) in parse_tsv_rows(&path, 3)? {
            edges.push((
                parse_field(&path, line, &f[0])?,
                parse_field(&path, line, &f[1])?,
                parse_field(&path, line, &f[2])?,
            ));
        }
        graphs.push(TrustGraph::new(m, edges)?);
    }
    let read_map = |name: &str, expected: usize| -> Result<IdMap> {
        let path = dir.join(name);
        let mut pairs = Vec::new();
        for (line, f) in parse_tsv_rows(&path, 2)? {
            pairs.push((f[0].clone(), parse_field(&path, line, &f[1])?));
        }
        let map = IdMap::from_pairs(pairs).map_err(|message| Error::Parse {
            path: path.clone(),
            line: 0,
            message,
        })?;
        if map.len() != expected {
            return Err(Error::Input(format!(
                "{} lists {} ids, meta.txt says {expected}",
                path.display(),
                map.len()
            )));
        }
        Ok(map)
    };
    Ok(BinnedData {
        ratings: RatingsTimeline::new(m, n, per_bin)?,
        trust: TrustTimeline::new(m, graphs)?,
        users: read_map("users.map", m)?,
        items: read_map("items.map", n)?,
    })
}

/// Counts reported after ingesting raw dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestSummary {
    pub users: usize,
    pub items: usize,
    pub bins: usize,
    pub ratings: usize,
    /// Edges of the last (cumulative) trust graph.
    pub edges: usize,
    pub malformed_ratings: usize,
    pub malformed_trust: usize,
}

impl IngestSummary {
    pub fn of(data: &BinnedData) -> Self {
        let bins = data.ratings.num_bins();
        Self {
            users: data.ratings.num_users(),
            items: data.ratings.num_items(),
            bins,
            ratings: data.ratings.total(),
            edges: data.trust.graph(bins - 1).num_edges(),
            malformed_ratings: 0,
            malformed_trust: 0,
        }
    }
}

/// Parse, filter and bin in one go.
pub fn ingest_dumps(
    ratings: &Path,
    trust: &Path,
    cutoffs: &Path,
    min_ratings: usize,
    rating_format: &FormatDescriptor,
    trust_format: &FormatDescriptor,
) -> Result<(BinnedData, IngestSummary)> {
    let parsed = parse_ratings(ratings, rating_format)?;
    let edges = parse_trust(trust, trust_format)?;
    let cut = read_cutoffs(cutoffs)?;
    let kept = filter_min_ratings(parsed.records, min_ratings);
    if kept.is_empty() {
        return Err(Error::Input(format!(
            "no user of {} has more than {min_ratings} ratings",
            ratings.display()
        )));
    }
    let data = bin_timelines(&kept, &edges.records, &cut)?;
    let summary = IngestSummary {
        malformed_ratings: parsed.malformed,
        malformed_trust: edges.malformed,
        ..IngestSummary::of(&data)
    };
    Ok((data, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn raw(user: &str, item: &str, value: f64, timestamp: i64) -> RawRating {
        RawRating {
            user_id: user.into(),
            item_id: item.into(),
            value,
            timestamp,
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), contents).unwrap();
        f
    }

    #[test]
    fn parses_tsv_rating() {
        let f = write_tmp("u1\ti9\t4\t2001-03-05\n");
        let out = parse_ratings(f.path(), &FormatDescriptor::ratings_tsv()).unwrap();
        let days = (NaiveDate::from_ymd_opt(2001, 3, 5).unwrap() - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days();
        assert_eq!(out.records, vec![raw("u1", "i9", 4.0, days)]);
        assert_eq!(out.malformed, 0);
    }

    #[test]
    fn empty_file_is_empty() {
        let f = write_tmp("");
        let out = parse_ratings(f.path(), &FormatDescriptor::ratings_tsv()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.malformed, 0);
    }

    #[test]
    fn few_malformed_rows_are_counted() {
        let f = write_tmp("u1\ti1\t4\t2001-01-01\nu1\ti2\tfour\t2001-01-01\nu2\ti1\t3\t2001-01-02\n");
        let out = parse_ratings(f.path(), &FormatDescriptor::ratings_tsv()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.malformed, 1);
        assert_eq!(out.diagnostics[0].0, 2);
    }

    #[test]
    fn mostly_malformed_is_a_format_error() {
        let f = write_tmp("a,b,c,d\ne,f,g,h\nu1\ti1\t4\t2001-01-01\n");
        let err = parse_ratings(f.path(), &FormatDescriptor::ratings_tsv()).unwrap_err();
        assert!(matches!(err, Error::Format { malformed: 2, total: 3, line: 1, .. }));
    }

    #[test]
    fn missing_file_names_path() {
        let err = parse_ratings(Path::new("/nonexistent/r.tsv"), &FormatDescriptor::ratings_tsv()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/r.tsv"));
    }

    #[test]
    fn custom_descriptor() {
        let f = write_tmp("date,item,user,score\n11000,i1,u1,2.5\n");
        let desc = FormatDescriptor {
            delimiter: Delimiter::Comma,
            columns: vec![2, 1, 3, 0],
            date_format: DateFormat::Days,
            skip_header: true,
        };
        let out = parse_ratings(f.path(), &desc).unwrap();
        assert_eq!(out.records, vec![raw("u1", "i1", 2.5, 11000)]);
    }

    #[test]
    fn trust_edges_dedup_to_earliest() {
        let f = write_tmp("u1\tu2\t2002-01-17\nu2\tu1\t2001-06-01\nu3\tu3\t2001-01-01\n");
        let out = parse_trust(f.path(), &FormatDescriptor::trust_tsv()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].user_a, "u1");
        assert_eq!(out.records[0].timestamp, parse_date("2001-06-01", DateFormat::Iso).unwrap());
        assert_eq!(out.dropped, 2);
    }

    #[test]
    fn min_ratings_filter_is_strict() {
        let mut rs: Vec<_> = (0..10).map(|i| raw("ten", &format!("i{i}"), 1.0, 0)).collect();
        rs.extend((0..11).map(|i| raw("eleven", &format!("i{i}"), 1.0, 0)));
        let out = filter_min_ratings(rs.clone(), 10);
        assert_eq!(out.len(), 11);
        assert!(out.iter().all(|r| r.user_id == "eleven"));
        assert_eq!(filter_min_ratings(rs.clone(), 0), rs);
    }

    #[test]
    fn binning_by_cutoffs() {
        assert_eq!(bin_of(&[100, 200], 150), 1);
        assert_eq!(bin_of(&[100, 200], 100), 1);
        assert_eq!(bin_of(&[100, 200], 99), 0);
        assert_eq!(bin_of(&[100, 200], 200), 2);
    }

    #[test]
    fn rejects_unsorted_cutoffs() {
        assert!(bin_timelines(&[], &[], &[5, 5]).is_err());
    }

    #[test]
    fn trust_is_cumulative_and_duplicates_keep_latest() {
        let ratings = vec![
            raw("a", "x", 1.0, 10),
            raw("a", "x", 5.0, 50),
            raw("b", "x", 2.0, 150),
            raw("c", "y", 3.0, 250),
            raw("a", "x", 4.0, 20),
        ];
        let edge = |a: &str, b: &str, t| RawTrustEdge { user_a: a.into(), user_b: b.into(), timestamp: t };
        let edges = vec![edge("a", "b", 5), edge("b", "c", 199), edge("a", "zz", 1)];
        let data = bin_timelines(&ratings, &edges, &[100, 200]).unwrap();
        assert_eq!(data.ratings.counts(), vec![1, 1, 1]);
        assert_eq!(data.ratings.bin(0)[0].value, 5.0);
        // oracle: re-scan every edge for every bin
        for t in 0..3 {
            let expected: HashSet<(usize, usize)> = edges
                .iter()
                .filter(|e| bin_of(&[100, 200], e.timestamp) <= t)
                .filter_map(|e| Some((data.users.get(&e.user_a)?, data.users.get(&e.user_b)?)))
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect();
            let got: HashSet<(usize, usize)> = data.trust.graph(t).edges().iter().map(|e| (e.0, e.1)).collect();
            assert_eq!(got, expected, "bin {t}");
        }
        assert!(data.trust.graph(0).contains(0, 1));
        assert_eq!(data.trust.graph(2).num_edges(), 2);
    }

    #[test]
    fn split_counts_and_determinism() {
        let obs: Vec<_> = (0..4).map(|i| RatingObservation { user: i, item: 0, value: 1.0, bin: 0 }).collect();
        let tl = RatingsTimeline::new(4, 1, vec![obs, vec![]]).unwrap();
        let a = split_train_test(&tl, 0.5, 7).unwrap();
        assert_eq!(a.train.counts(), vec![2, 0]);
        assert_eq!(a.test.counts(), vec![2, 0]);
        assert_eq!(a, split_train_test(&tl, 0.5, 7).unwrap());
        let odd = RatingsTimeline::new(3, 1, vec![(0..3).map(|i| RatingObservation { user: i, item: 0, value: 1.0, bin: 0 }).collect()]).unwrap();
        assert_eq!(split_train_test(&odd, 0.5, 1).unwrap().train.total(), 2);
        assert!(split_train_test(&tl, 1.0, 7).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let ratings = vec![raw("a", "x", 1.25, 10), raw("b", "y", 2.0, 150), raw("b", "x", 0.1, 151)];
        let edges = vec![RawTrustEdge { user_a: "b".into(), user_b: "a".into(), timestamp: 120 }];
        let data = bin_timelines(&ratings, &edges, &[100]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(dir.path(), &data).unwrap();
        let back = read_canonical(dir.path()).unwrap();
        assert_eq!(back, data);
        let meta = fs::read_to_string(dir.path().join("meta.txt")).unwrap();
        assert_eq!(meta, "m\t2\nn\t2\nN\t2\np_t\t1 2\nedges_t\t0 1\n");
    }

    proptest! {
        #[test]
        fn split_partitions_each_bin(sizes in proptest::collection::vec(0usize..40, 1..5), seed in any::<u64>(), fraction in 0.05f64..0.95) {
            let bins: Vec<Vec<_>> = sizes
                .iter()
                .enumerate()
                .map(|(t, &p)| (0..p).map(|i| RatingObservation { user: i, item: t, value: i as f64, bin: t }).collect())
                .collect();
            let tl = RatingsTimeline::new(40, 5, bins).unwrap();
            let s = split_train_test(&tl, fraction, seed).unwrap();
            prop_assert_eq!(&s, &split_train_test(&tl, fraction, seed).unwrap());
            for t in 0..tl.num_bins() {
                let key = |o: &RatingObservation| (o.user, o.item);
                let tr: HashSet<_> = s.train.bin(t).iter().map(key).collect();
                let te: HashSet<_> = s.test.bin(t).iter().map(key).collect();
                let all: HashSet<_> = tl.bin(t).iter().map(key).collect();
                prop_assert!(tr.is_disjoint(&te));
                prop_assert_eq!(tr.union(&te).copied().collect::<HashSet<_>>(), all);
                prop_assert_eq!(tr.len(), (fraction * tl.bin(t).len() as f64).ceil() as usize);
            }
        }
    }
}
