use std::fs::OpenOptions;
use std::path::Path;
use std::time::Instant;

use detlsh::io::GroundTruth;
use detlsh::parallel::{parallel_c2k_ann, WorkerPlan};
use detlsh::{c2k_ann, Dataset, DetIndex, PointId, QueryParams};

use crate::metrics::{overall_ratio, recall};
use crate::{CliError, Result};

pub const CSV_HEADER: [&str; 7] = [
    "config_hash",
    "query_id",
    "time_s",
    "recall",
    "ratio",
    "candidates",
    "rounds",
];

/// One CSV row: a query under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub config_hash: String,
    pub query_id: usize,
    /// Wall time of the query alone, microsecond resolution.
    pub time_s: f64,
    pub recall: f64,
    /// Infinity when a zero true distance meets a nonzero result distance.
    pub ratio: f64,
    pub candidates: usize,
    pub rounds: usize,
}

impl BenchRecord {
    fn fields(&self) -> [String; 7] {
        let ratio = if self.ratio.is_finite() {
            format!("{:.6}", self.ratio)
        } else {
            "inf".to_string()
        };
        [
            self.config_hash.clone(),
            self.query_id.to_string(),
            format!("{:.6}", self.time_s),
            format!("{:.6}", self.recall),
            ratio,
            self.candidates.to_string(),
            self.rounds.to_string(),
        ]
    }
}

/// Stable short hash of every setting that can change query results.
pub fn config_hash(index: &DetIndex, params: &QueryParams, k: usize) -> String {
    let cfg = index.config();
    let text = format!(
        "K={} L={} nr={} leaf={} seed={} sample={:?} c={} beta={} rmin={} k={}",
        cfg.proj_dim,
        cfg.spaces,
        cfg.regions,
        cfg.max_leaf,
        cfg.seed,
        cfg.sample_size,
        params.c,
        params.beta,
        params.r_min,
        k
    );
    format!("{:08x}", crc32fast::hash(text.as_bytes()))
}

/// Runs every query and scores it against `truth`, whose rows hold at least `k` neighbors.
pub fn run_queries(
    index: &DetIndex,
    queries: &Dataset,
    truth: &GroundTruth,
    k: usize,
    params: &QueryParams,
    plan: &WorkerPlan,
) -> Result<Vec<BenchRecord>> {
    if truth.neighbors.len() != queries.len() {
        return Err(CliError::Parameter(format!(
            "ground truth covers {} queries but {} were given",
            truth.neighbors.len(),
            queries.len()
        )));
    }
    let hash = config_hash(index, params, k);
    let mut out = Vec::with_capacity(queries.len());
    for (qi, q) in queries.rows().enumerate() {
        let gt = &truth.neighbors[qi];
        if gt.len() < k {
            return Err(CliError::Parameter(format!(
                "ground truth has {} neighbors per query, k is {k}",
                gt.len()
            )));
        }
        let start = Instant::now();
        let res = if plan.workers > 1 {
            parallel_c2k_ann(index, q, k, params, plan)?
        } else {
            c2k_ann(index, q, k, params)?
        };
        let time_s = start.elapsed().as_micros() as f64 / 1e6;
        let ids: Vec<PointId> = res.neighbors.iter().map(|n| n.id).collect();
        let gt_ids: Vec<PointId> = gt[..k].iter().map(|n| n.id).collect();
        out.push(BenchRecord {
            config_hash: hash.clone(),
            query_id: qi,
            time_s,
            recall: recall(&ids, &gt_ids)?,
            ratio: overall_ratio(&res.neighbors, &gt[..k])?,
            candidates: res.candidates,
            rounds: res.rounds,
        });
    }
    Ok(out)
}

/// Appends records to a CSV file, writing the header only when the file is new or empty.
pub struct CsvSink {
    writer: csv::Writer<std::fs::File>,
}

impl CsvSink {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer.write_record(CSV_HEADER)?;
        }
        Ok(Self { writer })
    }

    pub fn write(&mut self, records: &[BenchRecord]) -> Result<()> {
        for r in records {
            self.writer.write_record(r.fields())?;
        }
        self.writer.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        Ok(self.writer.flush()?)
    }
}
