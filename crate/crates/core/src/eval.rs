//! Metric ground truth, Hamming ranking, MAP@k and the batch and online
//! retrieval protocols.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::BinaryCode;
use crate::error::{ensure_dim, HqhError, Result};
use crate::hashing::{encode_all, BatchFitter, BatchPipelineConfig, StreamPipeline, StreamPipelineConfig};
use crate::matrix::DataMatrix;
use crate::rotation::{IsoHashConfig, RotationMethod};
use crate::seed;

/// Which points the neighbor radius is averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdBasis {
    /// Every training point, against the other training points.
    #[default]
    Training,
    /// Every query, against the training points.
    Queries,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub threshold: f64,
    /// Sorted training indices within `threshold` of each query.
    pub neighbor_sets: Vec<Vec<usize>>,
}

/// Rows per block of the pairwise distance computation.
const DIST_BLOCK: usize = 256;

fn sq_norms(x: &DataMatrix) -> Vec<f64> {
    x.points().map(|p| crate::linalg::dot(p, p)).collect()
}

/// Squared distances from the columns `start..start + len` of `a` to every
/// column of `b`, via `‖a‖² + ‖b‖² − 2 aᵀb`, clamped at zero.
fn sq_dist_block(
    a: &DataMatrix,
    a_norms: &[f64],
    start: usize,
    len: usize,
    b: &DataMatrix,
    b_norms: &[f64],
) -> DMatrix<f64> {
    let gram = a.values().columns(start, len).tr_mul(b.values());
    DMatrix::from_fn(len, b.len(), |i, j| {
        (a_norms[start + i] + b_norms[j] - 2.0 * gram[(i, j)]).max(0.0)
    })
}

/// Applies `f(global_row, distances)` to every row of the `a × b` squared
/// distance matrix, in parallel over blocks, collecting results in order.
fn map_distance_rows<T: Send>(
    a: &DataMatrix,
    b: &DataMatrix,
    f: impl Fn(usize, &[f64]) -> T + Sync,
) -> Vec<T> {
    let a_norms = sq_norms(a);
    let b_norms = sq_norms(b);
    let starts: Vec<usize> = (0..a.len()).step_by(DIST_BLOCK).collect();
    starts
        .par_iter()
        .flat_map_iter(|&start| {
            let len = DIST_BLOCK.min(a.len() - start);
            let block = sq_dist_block(a, &a_norms, start, len, b, &b_norms);
            let mut row = vec![0.0; b.len()];
            (0..len)
                .map(|i| {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = block[(i, j)];
                    }
                    f(start + i, &row)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}

/// Mean over training points of the distance to their `k`-th nearest other
/// training point, `k = round(frac · n)`.
pub fn neighbor_threshold(train: &DataMatrix, frac: f64) -> Result<f64> {
    neighbor_threshold_with(train, None, frac, ThresholdBasis::Training)
}

pub fn neighbor_threshold_with(
    train: &DataMatrix,
    queries: Option<&DataMatrix>,
    frac: f64,
    basis: ThresholdBasis,
) -> Result<f64> {
    let n = train.len();
    if n < 2 {
        return Err(HqhError::invalid("neighbor threshold needs at least two training points"));
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(HqhError::invalid(format!("neighbor fraction {frac} outside (0, 1)")));
    }
    let k = (frac * n as f64).round() as usize;
    let dists = match basis {
        ThresholdBasis::Training => {
            if k < 1 || k > n - 1 {
                return Err(HqhError::invalid(format!(
                    "neighbor rank k = {k} outside 1..={} for n = {n}",
                    n - 1
                )));
            }
            map_distance_rows(train, train, |t, row| {
                let mut others: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != t)
                    .map(|(_, &v)| v)
                    .collect();
                kth_smallest(&mut others, k).sqrt()
            })
        }
        ThresholdBasis::Queries => {
            let queries = queries.ok_or_else(|| HqhError::invalid("query-averaged threshold needs queries"))?;
            if queries.is_empty() {
                return Err(HqhError::invalid("query-averaged threshold needs queries"));
            }
            ensure_dim("threshold queries", train.dim(), queries.dim())?;
            if k < 1 || k > n {
                return Err(HqhError::invalid(format!("neighbor rank k = {k} outside 1..={n}")));
            }
            map_distance_rows(queries, train, |_, row| kth_smallest(&mut row.to_vec(), k).sqrt())
        }
    };
    let threshold = dists.iter().sum::<f64>() / dists.len() as f64;
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(HqhError::invalid("neighbor threshold is zero; points coincide"));
    }
    Ok(threshold)
}

/// Neighbor set of each query: training points within `threshold`.
pub fn build_ground_truth(train: &DataMatrix, queries: &DataMatrix, threshold: f64) -> Result<GroundTruth> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(HqhError::invalid("ground-truth threshold must be positive"));
    }
    if queries.is_empty() || train.is_empty() {
        return Ok(GroundTruth {
            threshold,
            neighbor_sets: vec![Vec::new(); queries.len()],
        });
    }
    ensure_dim("ground truth queries", train.dim(), queries.dim())?;
    let limit = threshold * threshold;
    let neighbor_sets = map_distance_rows(queries, train, |_, row| {
        row.iter()
            .enumerate()
            .filter(|&(_, &v)| v <= limit)
            .map(|(j, _)| j)
            .collect()
    });
    Ok(GroundTruth {
        threshold,
        neighbor_sets,
    })
}

fn hamming_all(query: &BinaryCode, train: &[BinaryCode]) -> Result<Vec<u32>> {
    train.iter().map(|t| query.hamming(t)).collect()
}

/// Training indices by ascending Hamming distance, ties by index.
pub fn rank_by_hamming(query: &BinaryCode, train: &[BinaryCode]) -> Result<Vec<usize>> {
    rank_top_k(query, train, train.len())
}

/// First `k` entries of [`rank_by_hamming`], by bucketing on distance.
pub fn rank_top_k(query: &BinaryCode, train: &[BinaryCode], k: usize) -> Result<Vec<usize>> {
    let dists = hamming_all(query, train)?;
    let mut buckets = vec![0usize; query.len() + 2];
    for &d in &dists {
        buckets[d as usize + 1] += 1;
    }
    for b in 1..buckets.len() {
        buckets[b] += buckets[b - 1];
    }
    let mut order = vec![0usize; train.len()];
    for (t, &d) in dists.iter().enumerate() {
        order[buckets[d as usize]] = t;
        buckets[d as usize] += 1;
    }
    order.truncate(k.min(train.len()));
    Ok(order)
}

/// Average precision over the first `k` ranks, normalized by
/// `min(|neighbors|, k)`. `neighbors` must be sorted. `None` when the query
/// has no neighbors.
pub fn average_precision(ranking: &[usize], neighbors: &[usize], k: usize) -> Option<f64> {
    if neighbors.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, idx) in ranking.iter().take(k).enumerate() {
        if neighbors.binary_search(idx).is_ok() {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / neighbors.len().min(k) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    pub map: f64,
    pub scored_queries: usize,
    pub excluded_queries: usize,
}

fn mean_ap(aps: impl Iterator<Item = Option<f64>>) -> Result<MapScore> {
    let (mut sum, mut scored, mut excluded) = (0.0, 0usize, 0usize);
    for ap in aps {
        match ap {
            Some(v) => {
                sum += v;
                scored += 1;
            }
            None => excluded += 1,
        }
    }
    if scored == 0 {
        return Err(HqhError::UndefinedMetric(
            "every query has an empty neighbor set".into(),
        ));
    }
    Ok(MapScore {
        map: sum / scored as f64,
        scored_queries: scored,
        excluded_queries: excluded,
    })
}

/// Mean AP@k over queries with at least one neighbor.
pub fn map_at_k(rankings: &[Vec<usize>], gt: &GroundTruth, k: usize) -> Result<MapScore> {
    if k == 0 {
        return Err(HqhError::invalid("MAP cutoff k must be at least 1"));
    }
    ensure_dim("rankings per query", gt.neighbor_sets.len(), rankings.len())?;
    mean_ap(
        rankings
            .iter()
            .zip(&gt.neighbor_sets)
            .map(|(r, n)| average_precision(r, n, k)),
    )
}

/// MAP@k of Hamming rankings, parallel over queries.
pub fn map_for_codes(
    query_codes: &[BinaryCode],
    train_codes: &[BinaryCode],
    gt: &GroundTruth,
    k: usize,
) -> Result<MapScore> {
    if k == 0 {
        return Err(HqhError::invalid("MAP cutoff k must be at least 1"));
    }
    ensure_dim("query codes", gt.neighbor_sets.len(), query_codes.len())?;
    let aps: Vec<Result<Option<f64>>> = query_codes
        .par_iter()
        .zip(&gt.neighbor_sets)
        .map(|(q, neighbors)| {
            if neighbors.is_empty() {
                return Ok(None);
            }
            let ranking = rank_top_k(q, train_codes, k)?;
            Ok(average_precision(&ranking, neighbors, k))
        })
        .collect();
    let aps: Vec<Option<f64>> = aps.into_iter().collect::<Result<_>>()?;
    mean_ap(aps.into_iter())
}

/// Shared retrieval settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_queries: usize,
    /// Neighbor radius rank as a fraction of the training set.
    pub frac: f64,
    pub threshold_basis: ThresholdBasis,
    /// MAP cutoff.
    pub k: usize,
    pub itq_iters: usize,
    pub isohash: IsoHashConfig,
    /// Record wall-clock times; off by default so reports are reproducible.
    pub timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_queries: 1000,
            frac: 0.01,
            threshold_basis: ThresholdBasis::Training,
            k: 2000,
            itq_iters: 50,
            isohash: IsoHashConfig::default(),
            timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchExperiment {
    pub methods: Vec<RotationMethod>,
    pub c_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineExperiment {
    pub methods: Vec<RotationMethod>,
    pub c: usize,
    pub seeds: Vec<u64>,
    pub checkpoint_every: usize,
    pub max_samples: usize,
    pub beta: f64,
    pub refit_every: usize,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: RotationMethod,
    pub c: usize,
    pub seed: u64,
    /// Training samples the model had seen.
    pub checkpoint: u64,
    pub map: f64,
    pub excluded_queries: usize,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: String,
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// CSV with a leading `# config:` comment line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config: {}\n", self.config);
        out.push_str("method,c,seed,checkpoint,map,excluded_queries,wall_ms\n");
        for r in &self.rows {
            let wall = r.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.17},{},{}",
                r.method, r.c, r.seed, r.checkpoint, r.map, r.excluded_queries, wall
            );
        }
        out
    }

    /// Rows for one method and code length, in report order.
    pub fn rows_for(&self, method: RotationMethod, c: usize) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.method == method && r.c == c)
    }

    /// Mean over seeds of the MAP at each seed's last checkpoint.
    pub fn final_map(&self, method: RotationMethod, c: usize) -> Option<f64> {
        let mut last: Vec<(u64, f64)> = Vec::new();
        for r in self.rows_for(method, c) {
            match last.iter_mut().find(|(s, _)| *s == r.seed) {
                Some(entry) => entry.1 = r.map,
                None => last.push((r.seed, r.map)),
            }
        }
        if last.is_empty() {
            return None;
        }
        Some(last.iter().map(|(_, m)| m).sum::<f64>() / last.len() as f64)
    }

    /// JSON summary: the config echo plus final MAP per method and `c`.
    pub fn summary_json(&self) -> serde_json::Value {
        let mut keys: Vec<(RotationMethod, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.c)) {
                keys.push((r.method, r.c));
            }
        }
        let results: Vec<serde_json::Value> = keys
            .iter()
            .map(|&(m, c)| {
                let per_seed: Vec<f64> = self
                    .rows_for(m, c)
                    .fold(Vec::<(u64, f64)>::new(), |mut acc, r| {
                        match acc.iter_mut().find(|(s, _)| *s == r.seed) {
                            Some(e) => e.1 = r.map,
                            None => acc.push((r.seed, r.map)),
                        }
                        acc
                    })
                    .into_iter()
                    .map(|(_, v)| v)
                    .collect();
                serde_json::json!({
                    "method": m,
                    "c": c,
                    "final_map": self.final_map(m, c),
                    "per_seed_final_map": per_seed,
                })
            })
            .collect();
        serde_json::json!({ "mode": self.mode, "config": self.config, "results": results })
    }
}

/// Seeded query/training split: `(queries, train)` index lists.
pub fn split_queries(n: usize, n_queries: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_queries == 0 || n_queries >= n {
        return Err(HqhError::invalid(format!(
            "cannot draw {n_queries} queries from {n} points and keep a training set"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::derive_rng(seed, "query-split", 0));
    let train = idx.split_off(n_queries);
    Ok((idx, train))
}

#[derive(Clone)]
struct Split {
    train: DataMatrix,
    queries: DataMatrix,
    gt: GroundTruth,
}

fn prepare_split(data: &DataMatrix, eval: &EvalConfig, seed: u64) -> Result<Split> {
    let (q_idx, t_idx) = split_queries(data.len(), eval.n_queries, seed)?;
    given_split(data.select(&t_idx), data.select(&q_idx), eval)
}

fn given_split(train: DataMatrix, queries: DataMatrix, eval: &EvalConfig) -> Result<Split> {
    if eval.k == 0 {
        return Err(HqhError::invalid("MAP cutoff k must be at least 1"));
    }
    ensure_dim("query dimension", train.dim(), queries.dim())?;
    let threshold = neighbor_threshold_with(&train, Some(&queries), eval.frac, eval.threshold_basis)?;
    let gt = build_ground_truth(&train, &queries, threshold)?;
    Ok(Split { train, queries, gt })
}

/// Where each seed's training and query sets come from.
enum Source<'a> {
    Sampled(&'a DataMatrix),
    Fixed(&'a Split),
}

impl Source<'_> {
    fn split(&self, eval: &EvalConfig, seed: u64) -> Result<Cow<'_, Split>> {
        match self {
            Source::Sampled(data) => prepare_split(data, eval, seed).map(Cow::Owned),
            Source::Fixed(split) => Ok(Cow::Borrowed(*split)),
        }
    }
}

fn elapsed_ms(timing: bool, start: Instant) -> Option<f64> {
    timing.then(|| start.elapsed().as_secs_f64() * 1e3)
}

/// Learns each model on the whole training split and scores MAP@k once.
pub fn run_batch_experiment(data: &DataMatrix, exp: &BatchExperiment) -> Result<ExperimentReport> {
    batch_experiment(Source::Sampled(data), exp)
}

/// [`run_batch_experiment`] on a fixed training/query split; seeds then
/// only vary the learned rotations.
pub fn run_batch_experiment_split(
    train: &DataMatrix,
    queries: &DataMatrix,
    exp: &BatchExperiment,
) -> Result<ExperimentReport> {
    let split = given_split(train.clone(), queries.clone(), &exp.eval)?;
    batch_experiment(Source::Fixed(&split), exp)
}

fn batch_experiment(source: Source<'_>, exp: &BatchExperiment) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    for &seed in &exp.seeds {
        let split = source.split(&exp.eval, seed)?;
        let fitter = BatchFitter::new(&split.train)?;
        for &c in &exp.c_values {
            for &method in &exp.methods {
                let start = Instant::now();
                let config = BatchPipelineConfig {
                    c,
                    rotation_method: method,
                    itq_iters: exp.eval.itq_iters,
                    isohash: exp.eval.isohash.clone(),
                    seed,
                };
                let model = fitter.fit(&config)?;
                let train_codes = encode_all(&model, &split.train)?;
                let query_codes = encode_all(&model, &split.queries)?;
                let score = map_for_codes(&query_codes, &train_codes, &split.gt, exp.eval.k)?;
                rows.push(ReportRow {
                    method,
                    c,
                    seed,
                    checkpoint: split.train.len() as u64,
                    map: score.map,
                    excluded_queries: score.excluded_queries,
                    wall_ms: elapsed_ms(exp.eval.timing, start),
                });
            }
        }
    }
    Ok(ExperimentReport {
        mode: "batch".into(),
        config: serde_json::to_value(exp).expect("config serializes"),
        rows,
    })
}

/// Streams the training split through each pipeline; at every checkpoint
/// the current model re-encodes the full training set and the queries.
pub fn run_online_experiment(data: &DataMatrix, exp: &OnlineExperiment) -> Result<ExperimentReport> {
    online_experiment(Source::Sampled(data), exp)
}

/// [`run_online_experiment`] on a fixed training/query split.
pub fn run_online_experiment_split(
    train: &DataMatrix,
    queries: &DataMatrix,
    exp: &OnlineExperiment,
) -> Result<ExperimentReport> {
    let split = given_split(train.clone(), queries.clone(), &exp.eval)?;
    online_experiment(Source::Fixed(&split), exp)
}

fn online_experiment(source: Source<'_>, exp: &OnlineExperiment) -> Result<ExperimentReport> {
    if exp.checkpoint_every == 0 {
        return Err(HqhError::invalid("checkpoint_every must be at least 1"));
    }
    let mut rows = Vec::new();
    for &seed in &exp.seeds {
        let split = source.split(&exp.eval, seed)?;
        let max_samples = exp.max_samples.min(split.train.len());
        if max_samples == 0 {
            return Err(HqhError::invalid("online experiment needs at least one sample"));
        }
        for &method in &exp.methods {
            let config = StreamPipelineConfig {
                c: exp.c,
                rotation_method: method,
                beta: exp.beta,
                refit_every: exp.refit_every,
                isohash: exp.eval.isohash.clone(),
                seed,
            };
            let mut pipeline = StreamPipeline::new(split.train.dim(), config)?;
            let start = Instant::now();
            for t in 0..max_samples {
                pipeline.ingest(split.train.point(t))?;
                let seen = t + 1;
                if seen % exp.checkpoint_every == 0 || seen == max_samples {
                    let model = pipeline.model();
                    let train_codes = encode_all(model, &split.train)?;
                    let query_codes = encode_all(model, &split.queries)?;
                    let score = map_for_codes(&query_codes, &train_codes, &split.gt, exp.eval.k)?;
                    rows.push(ReportRow {
                        method,
                        c: exp.c,
                        seed,
                        checkpoint: seen as u64,
                        map: score.map,
                        excluded_queries: score.excluded_queries,
                        wall_ms: elapsed_ms(exp.eval.timing, start),
                    });
                }
            }
        }
    }
    Ok(ExperimentReport {
        mode: "online".into(),
        config: serde_json::to_value(exp).expect("config serializes"),
        rows,
    })
}
