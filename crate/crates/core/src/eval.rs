//! Detection and recognition metrics: DET curve, EER, decision latency,
//! per-domain false rejection and WER.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Intent;
use crate::decoding::DetectorOutput;
use crate::error::{Error, Result};

/// One evaluated stream, reduced to what the metrics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub id: String,
    pub domain: String,
    pub true_intent: Intent,
    pub start_of_speech_ms: f64,
    /// `(time_ms, score)` in stream order.
    pub stream: Vec<(f64, f64)>,
}

impl ScoredUtterance {
    pub fn from_output(id: &str, domain: &str, intent: Intent, start_of_speech_ms: f64, out: &DetectorOutput) -> Self {
        ScoredUtterance {
            id: id.into(),
            domain: domain.into(),
            true_intent: intent,
            start_of_speech_ms,
            stream: out.events.iter().zip(&out.scores).map(|(e, &s)| (e.time_ms, s)).collect(),
        }
    }

    /// Largest score in the stream; the stream crosses θ exactly when this is ≥ θ.
    pub fn max_score(&self) -> f64 {
        self.stream.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Time of the first event with score ≥ θ.
    pub fn crossing_time(&self, threshold: f64) -> Option<f64> {
        self.stream.iter().find(|&&(_, s)| s >= threshold).map(|&(t, _)| t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub false_accept_rate: f64,
    pub false_reject_rate: f64,
}

/// Every distinct observed score plus 0 and 1, ascending.
pub fn threshold_grid(scored: &[ScoredUtterance]) -> Vec<f64> {
    let mut grid: Vec<f64> = scored.iter().map(ScoredUtterance::max_score).filter(|s| s.is_finite()).collect();
    grid.extend([0.0, 1.0]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// False accepts (unintended streams that cross) and false rejects (intended
/// streams that never cross) at each threshold.
pub fn det_curve(scored: &[ScoredUtterance], thresholds: &[f64]) -> Result<Vec<DetPoint>> {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for s in scored {
        match s.true_intent {
            Intent::Intended => pos.push(s.max_score()),
            Intent::Unintended => neg.push(s.max_score()),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::arg("DET curve needs both intended and unintended utterances"));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    // Count of sorted values strictly below θ.
    let below = |v: &[f64], th: f64| v.partition_point(|&x| x < th);
    Ok(thresholds
        .iter()
        .map(|&th| DetPoint {
            threshold: th,
            false_accept_rate: (neg.len() - below(&neg, th)) as f64 / neg.len() as f64,
            false_reject_rate: below(&pos, th) as f64 / pos.len() as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    /// False when no pair of adjacent points straddles FA = FR; the closest point is reported instead.
    pub straddled: bool,
}

/// Equal error rate by linear interpolation between the two adjacent points
/// (in threshold order) where FA − FR changes sign.
pub fn eer(det: &[DetPoint]) -> Result<EerResult> {
    if det.is_empty() {
        return Err(Error::arg("empty DET curve"));
    }
    let mut pts = det.to_vec();
    pts.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    let diff = |p: &DetPoint| p.false_accept_rate - p.false_reject_rate;
    if let Some(p) = pts.iter().find(|p| diff(p) == 0.0) {
        return Ok(EerResult {
            eer: p.false_accept_rate,
            threshold: p.threshold,
            straddled: true,
        });
    }
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (da, db) = (diff(a), diff(b));
        if da > 0.0 && db < 0.0 {
            let f = da / (da - db);
            return Ok(EerResult {
                eer: a.false_accept_rate + f * (b.false_accept_rate - a.false_accept_rate),
                threshold: a.threshold + f * (b.threshold - a.threshold),
                straddled: true,
            });
        }
    }
    let closest = pts
        .iter()
        .min_by(|a, b| diff(a).abs().total_cmp(&diff(b).abs()))
        .expect("non-empty");
    Ok(EerResult {
        eer: 0.5 * (closest.false_accept_rate + closest.false_reject_rate),
        threshold: closest.threshold,
        straddled: false,
    })
}

/// The smallest grid threshold at or above `th`; decisions at `th` and at this
/// value agree because no stream's maximum lies strictly between them.
pub fn operating_threshold(grid: &[f64], th: f64) -> f64 {
    grid.iter().copied().find(|&g| g >= th).unwrap_or(th)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub p50_ms: Option<f64>,
    pub p90_ms: Option<f64>,
    /// Fraction of intended streams that reached a decision.
    pub coverage: f64,
    pub decided: usize,
}

/// Nearest-rank percentile of a sorted, non-empty slice: element `⌈p·n⌉` (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Decision latency (decision time − start of speech) over the intended
/// streams that cross θ.
pub fn latency_percentiles(scored: &[ScoredUtterance], threshold: f64) -> LatencyReport {
    let intended: Vec<&ScoredUtterance> = scored.iter().filter(|s| s.true_intent == Intent::Intended).collect();
    let mut lat: Vec<f64> = intended
        .iter()
        .filter_map(|s| s.crossing_time(threshold).map(|t| t - s.start_of_speech_ms))
        .collect();
    lat.sort_by(f64::total_cmp);
    let coverage = if intended.is_empty() {
        0.0
    } else {
        lat.len() as f64 / intended.len() as f64
    };
    LatencyReport {
        p50_ms: (!lat.is_empty()).then(|| nearest_rank(&lat, 0.5)),
        p90_ms: (!lat.is_empty()).then(|| nearest_rank(&lat, 0.9)),
        coverage,
        decided: lat.len(),
    }
}

/// False-reject rate of intended streams, per domain tag.
pub fn per_domain_fr(scored: &[ScoredUtterance], threshold: f64) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in scored.iter().filter(|s| s.true_intent == Intent::Intended) {
        let c = counts.entry(s.domain.clone()).or_default();
        c.1 += 1;
        if s.max_score() < threshold {
            c.0 += 1;
        }
    }
    counts.into_iter().map(|(d, (r, n))| (d, r as f64 / n as f64)).collect()
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate of one hypothesis.
pub fn wer<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::arg("WER needs a non-empty reference"));
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Corpus WER: total edits over total reference words.
pub fn corpus_wer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    let words: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    if words == 0 {
        return Err(Error::arg("WER needs a non-empty reference"));
    }
    let edits: usize = pairs.iter().map(|(h, r)| edit_distance(h, r)).sum();
    Ok(edits as f64 / words as f64)
}

pub fn write_det_csv<W: Write>(out: &mut W, det: &[DetPoint]) -> std::io::Result<()> {
    writeln!(out, "threshold,fa_rate,fr_rate")?;
    for p in det {
        writeln!(out, "{},{},{}", p.threshold, p.false_accept_rate, p.false_reject_rate)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub model: String,
    pub eer: f64,
    pub eer_threshold: f64,
    /// Threshold used for latency and per-domain FR.
    pub operating_threshold: f64,
    pub p50_ms: Option<f64>,
    pub p90_ms: Option<f64>,
    pub coverage: f64,
    pub per_domain_fr: BTreeMap<String, f64>,
    pub wer: Option<f64>,
}

/// EER, plus latency and per-domain FR at `threshold` (the EER threshold when `None`).
pub fn report(
    model: &str,
    scored: &[ScoredUtterance],
    threshold: Option<f64>,
    wer: Option<f64>,
) -> Result<(DetectorReport, Vec<DetPoint>)> {
    let grid = threshold_grid(scored);
    let det = det_curve(scored, &grid)?;
    let e = eer(&det)?;
    let op = threshold.unwrap_or_else(|| operating_threshold(&grid, e.threshold));
    let lat = latency_percentiles(scored, op);
    Ok((
        DetectorReport {
            model: model.into(),
            eer: e.eer,
            eer_threshold: e.threshold,
            operating_threshold: op,
            p50_ms: lat.p50_ms,
            p90_ms: lat.p90_ms,
            coverage: lat.coverage,
            per_domain_fr: per_domain_fr(scored, op),
            wer,
        },
        det,
    ))
}

/// Fixed-width summary table.
pub fn format_table(reports: &[DetectorReport]) -> String {
    let ms = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.0}"));
    let mut s = format!(
        "{:<16} {:>8} {:>9} {:>9} {:>9}\n",
        "model", "EER(%)", "p50(ms)", "p90(ms)", "coverage"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<16} {:>8.2} {:>9} {:>9} {:>9.3}\n",
            r.model,
            100.0 * r.eer,
            ms(r.p50_ms),
            ms(r.p90_ms),
            r.coverage
        ));
    }
    s
}
