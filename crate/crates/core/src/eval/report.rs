//! Evaluation reports: per-query records, aggregates and plot data.

use std::fmt::Write as _;

use super::metrics::{median_errors, recall_at_thresholds, QueryError, RetrievalMetrics, RECALL_THRESHOLDS};
use crate::error::{Error, Result};
use crate::pose::StageTimings;
use crate::retrieval::SpatialIndex;
use crate::scene::SceneBundle;
use crate::vae::{checkpoint_size, LogRecord, VaeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: u64,
    pub success: bool,
    /// Infinite for failed queries.
    pub t_err: f64,
    pub r_err: f64,
    pub submap_size: usize,
    pub matches: usize,
    pub inliers: usize,
    pub retrieval: Option<RetrievalMetrics>,
    /// Wall-clock stage times when the query was localised in this process.
    pub timings: Option<StageTimings>,
}

impl QueryRecord {
    pub fn error(&self) -> QueryError {
        self.success.then_some((self.t_err, self.r_err))
    }

    /// One `key=value` line.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "query={} success={} t_err={} r_err={} submap={} matches={} inliers={}",
            self.id, self.success, self.t_err, self.r_err, self.submap_size, self.matches, self.inliers
        );
        if let Some(m) = &self.retrieval {
            write!(s, " recall={} precision={} reduction={}", m.recall, m.precision, m.reduction).unwrap();
        }
        if let Some(t) = &self.timings {
            write!(
                s,
                " global_us={:.1} lookup_us={:.1} matching_us={:.1} pose_us={:.1}",
                t.global_search_us, t.tree_lookup_us, t.matching_us, t.pose_us
            )
            .unwrap();
        }
        s
    }
}

/// Mean time per stage over a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub mean: StageTimings,
    pub total_us: f64,
    pub count: usize,
}

pub fn timing_report(timings: &[StageTimings]) -> Result<TimingReport> {
    if timings.is_empty() {
        return Err(Error::UndefinedMetric("no timings".into()));
    }
    let n = timings.len() as f64;
    let mut sum = [0.0; 4];
    for t in timings {
        for (s, v) in sum.iter_mut().zip(t.as_array()) {
            *s += v;
        }
    }
    let mean = StageTimings {
        global_search_us: sum[0] / n,
        tree_lookup_us: sum[1] / n,
        matching_us: sum[2] / n,
        pose_us: sum[3] / n,
    };
    Ok(TimingReport { mean, total_us: mean.total_us(), count: timings.len() })
}

impl TimingReport {
    /// Milliseconds per stage in one row, in pipeline order.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let names = StageTimings::STAGES;
        writeln!(s, "{:>14} {:>14} {:>14} {:>14} {:>14}", names[0], names[1], names[2], names[3], "total").unwrap();
        let m = self.mean.as_array();
        writeln!(
            s,
            "{:>14.3} {:>14.3} {:>14.3} {:>14.3} {:>14.3}",
            m[0] / 1e3,
            m[1] / 1e3,
            m[2] / 1e3,
            m[3] / 1e3,
            self.total_us / 1e3
        )
        .unwrap();
        s
    }
}

/// Bytes held by each part of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageReport {
    /// Model checkpoint: the only storage the retrieval stage needs.
    pub retrieval_bytes: usize,
    pub parameter_count: usize,
    pub index_bytes: usize,
    pub map_point_bytes: usize,
    pub map_descriptor_bytes: usize,
    /// What an image-retrieval database of the mapping images would take.
    pub image_retrieval_bytes: usize,
}

/// Size of a flat image-retrieval database: one id and one embedding per image.
pub fn image_retrieval_database_bytes(images: usize, embedding_dim: usize) -> usize {
    16 + images * (8 + 4 * embedding_dim)
}

pub fn storage_report(model: &VaeModel, bundle: &SceneBundle, index: &SpatialIndex) -> StorageReport {
    StorageReport {
        retrieval_bytes: checkpoint_size(model),
        parameter_count: model.parameter_count(),
        index_bytes: index.storage_bytes(),
        map_point_bytes: bundle.points().len() * (8 + 24),
        map_descriptor_bytes: bundle.points().len() * bundle.descriptor_dim() * 4,
        image_retrieval_bytes: image_retrieval_database_bytes(bundle.images().len(), bundle.embedding_dim()),
    }
}

impl StorageReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (name, v) in [
            ("retrieval (checkpoint)", self.retrieval_bytes),
            ("model parameters (count)", self.parameter_count),
            ("spatial index", self.index_bytes),
            ("map points", self.map_point_bytes),
            ("map descriptors", self.map_descriptor_bytes),
            ("image-retrieval database", self.image_retrieval_bytes),
        ] {
            writeln!(s, "{name:<26} {v:>14}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by query id.
    pub records: Vec<QueryRecord>,
    pub median_t: f64,
    pub median_r: f64,
    /// Paired with [`RECALL_THRESHOLDS`].
    pub recall: Vec<f64>,
    /// Present when any record carries timings.
    pub timing: Option<TimingReport>,
    pub mean_retrieval: Option<RetrievalMetrics>,
    pub storage: Option<StorageReport>,
}

impl EvalReport {
    pub fn new(mut records: Vec<QueryRecord>, storage: Option<StorageReport>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        let errors: Vec<QueryError> = records.iter().map(QueryRecord::error).collect();
        let (median_t, median_r) = median_errors(&errors)?;
        let recall = recall_at_thresholds(&errors, &RECALL_THRESHOLDS)?;
        let times: Vec<StageTimings> = records.iter().filter_map(|r| r.timings).collect();
        let timing = if times.is_empty() { None } else { Some(timing_report(&times)?) };
        let ret: Vec<&RetrievalMetrics> = records.iter().filter_map(|r| r.retrieval.as_ref()).collect();
        let mean_retrieval = (!ret.is_empty()).then(|| {
            let n = ret.len() as f64;
            RetrievalMetrics {
                recall: ret.iter().map(|m| m.recall).sum::<f64>() / n,
                precision: ret.iter().map(|m| m.precision).sum::<f64>() / n,
                reduction: ret.iter().map(|m| m.reduction).sum::<f64>() / n,
            }
        });
        Ok(EvalReport { records, median_t, median_r, recall, timing, mean_retrieval, storage })
    }

    pub fn success_rate(&self) -> f64 {
        self.records.iter().filter(|r| r.success).count() as f64 / self.records.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "queries             {}", self.records.len()).unwrap();
        writeln!(s, "localised           {:.3}", self.success_rate()).unwrap();
        writeln!(s, "median error        {:.4} m  {:.4} deg", self.median_t, self.median_r).unwrap();
        for ((t, r), v) in RECALL_THRESHOLDS.iter().zip(&self.recall) {
            writeln!(s, "recall ({t} m, {r} deg)  {v:.3}").unwrap();
        }
        if let Some(m) = &self.mean_retrieval {
            writeln!(s, "retrieval recall    {:.3}", m.recall).unwrap();
            writeln!(s, "retrieval precision {:.3}", m.precision).unwrap();
            writeln!(s, "reduction ratio     {:.3}", m.reduction).unwrap();
        }
        if let Some(t) = &self.timing {
            writeln!(s, "\nmean time per stage, ms").unwrap();
            s.push_str(&t.to_table());
        }
        if let Some(st) = &self.storage {
            writeln!(s, "\nstorage, bytes").unwrap();
            s.push_str(&st.to_table());
        }
        s
    }

    /// Line-delimited `key=value` records, one per query.
    pub fn to_records(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }

    /// Empirical CDF of translation error as `error fraction` rows; failures are left out.
    pub fn translation_cdf(&self) -> String {
        cdf(self.records.iter().filter(|r| r.success).map(|r| r.t_err), self.records.len())
    }

    pub fn rotation_cdf(&self) -> String {
        cdf(self.records.iter().filter(|r| r.success).map(|r| r.r_err), self.records.len())
    }
}

fn cdf(values: impl Iterator<Item = f64>, total: usize) -> String {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        writeln!(s, "{x} {}", (i + 1) as f64 / total as f64).unwrap();
    }
    s
}

/// Training loss curve as `iteration loss` rows.
pub fn loss_curve(log: &[LogRecord]) -> String {
    log.iter().map(|r| format!("{} {}\n", r.iter, r.loss)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u64, ok: bool, t: f64, timings: [f64; 4]) -> QueryRecord {
        QueryRecord {
            id,
            success: ok,
            t_err: if ok { t } else { f64::INFINITY },
            r_err: if ok { t * 2.0 } else { f64::INFINITY },
            submap_size: 10,
            matches: 5,
            inliers: 4,
            retrieval: None,
            timings: Some(StageTimings {
                global_search_us: timings[0],
                tree_lookup_us: timings[1],
                matching_us: timings[2],
                pose_us: timings[3],
            }),
        }
    }

    #[test]
    fn single_estimate_timing() {
        let t = StageTimings { global_search_us: 1.0, tree_lookup_us: 2.0, matching_us: 3.0, pose_us: 4.0 };
        let r = timing_report(&[t]).unwrap();
        assert_eq!(r.mean, t);
        assert_eq!(r.total_us, 10.0);
        assert!(timing_report(&[]).is_err());
    }

    #[test]
    fn stage_means_sum_to_total() {
        let ts: Vec<StageTimings> = (0..7)
            .map(|i| StageTimings {
                global_search_us: 1.5 * i as f64,
                tree_lookup_us: 0.3,
                matching_us: 7.0 / (i + 1) as f64,
                pose_us: 100.0,
            })
            .collect();
        let r = timing_report(&ts).unwrap();
        let mean_total: f64 = ts.iter().map(|t| t.total_us()).sum::<f64>() / 7.0;
        assert!((r.total_us - mean_total).abs() < 1e-9);
    }

    #[test]
    fn report_sorts_and_aggregates() {
        let recs = vec![record(3, true, 0.1, [1.0; 4]), record(1, false, 0.0, [2.0; 4]), record(2, true, 0.3, [3.0; 4])];
        let rep = EvalReport::new(recs, None).unwrap();
        assert_eq!(rep.records.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(rep.median_t, 0.3);
        assert_eq!(rep.recall[0], 1.0 / 3.0);
        assert_eq!(rep.timing.unwrap().mean.pose_us, 2.0);
        assert_eq!(rep.to_records().lines().count(), 3);
        assert!(rep.to_text().contains("median error"));
        assert_eq!(rep.translation_cdf().lines().count(), 2);
    }

    #[test]
    fn image_database_grows_linearly() {
        let a = image_retrieval_database_bytes(100, 768);
        let b = image_retrieval_database_bytes(1000, 768);
        let c = image_retrieval_database_bytes(1900, 768);
        assert_eq!(c - b, b - a);
        assert!(b > 9 * a);
    }
}
