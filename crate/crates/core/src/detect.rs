//! Reconstruction-error scoring and outlier flagging.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::ingest::Mmsi;
use crate::nn::Model;
use crate::preprocess::Feature;
use crate::sequence::SequenceSet;
use crate::{Error, Result, NUM_FEATURES, SENTINEL};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub mmsi: Mmsi,
    pub day: NaiveDate,
    pub rmse: f64,
    /// Optional per-feature diagnostic, tensor feature order.
    pub feature_rmse: Option<[f64; NUM_FEATURES]>,
}

/// How sentinel (`-1`) target cells enter the RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RmseKind {
    #[default]
    AllCells,
    /// Only cells whose truth is not the sentinel.
    Masked,
}

impl RmseKind {
    pub fn column(self) -> &'static str {
        match self {
            RmseKind::AllCells => "rmse",
            RmseKind::Masked => "rmse_masked",
        }
    }
}

fn rmse_impl(pred: &[f64], truth: &[f64], kind: RmseKind) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if kind == RmseKind::Masked && *t == SENTINEL {
            continue;
        }
        sum += (p - t) * (p - t);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Root mean squared error over every cell of one sequence.
pub fn rmse_per_sequence(pred: &[f64], truth: &[f64]) -> Result<f64> {
    rmse_with(pred, truth, RmseKind::AllCells)
}

pub fn rmse_with(pred: &[f64], truth: &[f64], kind: RmseKind) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(&[truth.len()], &[pred.len()]));
    }
    Ok(rmse_impl(pred, truth, kind))
}

fn feature_rmse(pred: &[f64], truth: &[f64], kind: RmseKind) -> [f64; NUM_FEATURES] {
    std::array::from_fn(|f| {
        let p: Vec<f64> = pred.iter().skip(f).step_by(NUM_FEATURES).copied().collect();
        let t: Vec<f64> = truth.iter().skip(f).step_by(NUM_FEATURES).copied().collect();
        rmse_impl(&p, &t, kind)
    })
}

/// One score per sequence of `set`, in set order.
pub fn score_set(model: &Model, set: &SequenceSet, kind: RmseKind, per_feature: bool) -> Result<Vec<ScoreRecord>> {
    if set.is_empty() {
        return Ok(Vec::new());
    }
    let pred = model.reconstruct(set.tensor())?;
    let row = model.config.timesteps * model.config.features;
    Ok(set
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let p = &pred.data()[i * row..(i + 1) * row];
            let t = set.row(i);
            ScoreRecord {
                mmsi: id.mmsi,
                day: id.day,
                rmse: rmse_impl(p, t, kind),
                feature_rmse: per_feature.then(|| feature_rmse(p, t, kind)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub count: usize,
    pub histogram: Histogram,
}

/// Population mean and standard deviation plus an equal-width histogram on
/// `[0, max]`. The top edge is inclusive.
pub fn fit_distribution(scores: &[f64], bins: usize) -> Result<ScoreDistribution> {
    if scores.is_empty() {
        return Err(Error::Data("cannot fit a distribution to zero scores".into()));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Data(format!("invalid score {bad}")));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };

    let max = *sorted.last().expect("non-empty");
    let width = max / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { max } else { i as f64 * width }).collect();
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let b = if width > 0.0 {
            ((s / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(ScoreDistribution {
        mean,
        std,
        median,
        count: scores.len(),
        histogram: Histogram { edges, counts },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub threshold: f64,
    pub k: f64,
    /// Scores strictly above the threshold, highest first.
    pub flagged: Vec<ScoreRecord>,
}

/// Flags scores strictly above `mean + k * std`.
pub fn flag_outliers(scores: &[ScoreRecord], dist: &ScoreDistribution, k: f64) -> Result<OutlierReport> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Config(format!("sigma multiplier must be > 0, got {k}")));
    }
    let threshold = dist.mean + k * dist.std;
    let mut flagged: Vec<ScoreRecord> = scores.iter().filter(|s| s.rmse > threshold).cloned().collect();
    flagged.sort_by(|a, b| {
        b.rmse
            .total_cmp(&a.rmse)
            .then_with(|| (a.mmsi, a.day).cmp(&(b.mmsi, b.day)))
    });
    Ok(OutlierReport { threshold, k, flagged })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffenderReport {
    pub min_appearances: usize,
    pub counts: BTreeMap<Mmsi, usize>,
    /// MMSIs with at least `min_appearances` flags, by count descending.
    pub persistent: Vec<(Mmsi, usize)>,
}

fn by_count_desc(counts: &BTreeMap<Mmsi, usize>) -> Vec<(Mmsi, usize)> {
    let mut v: Vec<(Mmsi, usize)> = counts.iter().map(|(m, c)| (*m, *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Counts flagged vessel-days per MMSI.
pub fn offender_frequency(report: &OutlierReport, min_appearances: usize) -> Result<OffenderReport> {
    if min_appearances == 0 {
        return Err(Error::Config("min_appearances must be >= 1".into()));
    }
    let mut counts = BTreeMap::new();
    for r in &report.flagged {
        *counts.entry(r.mmsi).or_insert(0usize) += 1;
    }
    let persistent = by_count_desc(&counts)
        .into_iter()
        .filter(|(_, c)| *c >= min_appearances)
        .collect();
    Ok(OffenderReport {
        min_appearances,
        counts,
        persistent,
    })
}

pub fn scores_csv(scores: &[ScoreRecord], kind: RmseKind) -> String {
    let per_feature = scores.first().is_some_and(|s| s.feature_rmse.is_some());
    let mut s = format!("mmsi,day,{}", kind.column());
    if per_feature {
        for f in Feature::ALL {
            s.push_str(&format!(",{}_{}", kind.column(), f.name()));
        }
    }
    s.push('\n');
    for r in scores {
        s.push_str(&format!("{},{},{}", r.mmsi, r.day, r.rmse));
        if let Some(fr) = r.feature_rmse.filter(|_| per_feature) {
            for v in fr {
                s.push_str(&format!(",{v}"));
            }
        }
        s.push('\n');
    }
    s
}

/// Reads a file written by [`scores_csv`]; the third column is the score.
pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || Error::Data(format!("{}: bad row {}", path.display(), i + 1));
        let mmsi = row.get(0).and_then(Mmsi::parse).ok_or_else(bad)?;
        let day = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let rmse: f64 = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(ScoreRecord {
            mmsi,
            day,
            rmse,
            feature_rmse: None,
        });
    }
    Ok(out)
}

pub fn outliers_csv(report: &OutlierReport) -> String {
    let mut s = String::from("rank,mmsi,day,rmse,threshold,k\n");
    for (i, r) in report.flagged.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            r.mmsi,
            r.day,
            r.rmse,
            report.threshold,
            report.k
        ));
    }
    s
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], c));
    }
    s
}

pub fn offenders_csv(report: &OffenderReport) -> String {
    let mut s = String::from("mmsi,flag_count,persistent\n");
    for (m, c) in by_count_desc(&report.counts) {
        s.push_str(&format!("{},{},{}\n", m, c, u8::from(c >= report.min_appearances)));
    }
    s
}
