//! Ranking metrics for multi-label predictions.
//!
//! Per-class metrics score each tag column across clips; per-clip metrics
//! score each clip row across tags. Columns or rows for which a metric is
//! undefined (no positives, or no negatives for AUC) are left out of the
//! average and counted.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// ROC AUC in its Mann-Whitney form: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (mut neg_below, mut concordant2) = (0u64, 0u64);
    let (mut pos_total, mut neg_total) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        // Twice the credit keeps everything in integers.
        concordant2 += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        pos_total += pos;
        neg_total += neg;
        i = j;
    }
    if pos_total == 0 || neg_total == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos_total} positive, {neg_total} negative)"
        )));
    }
    Ok(concordant2 as f64 / (2 * pos_total * neg_total) as f64)
}

/// Mean of precision@rank over the ranks of the positives, scores sorted
/// descending with ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive label".into()));
    }
    Ok(sum / hits as f64)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(format!(
            "pearson needs two sequences of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::UndefinedMetric("pearson correlation with zero variance".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("pearson correlation with zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j - 1) as f64 + 1.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Scores and binary labels, `num_clips x num_tags`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    num_clips: usize,
    num_tags: usize,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl EvalTable {
    pub fn new(num_clips: usize, num_tags: usize, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != num_clips * num_tags || labels.len() != num_clips * num_tags {
            return Err(Error::invalid(format!(
                "eval table {num_clips}x{num_tags} needs {} entries, got {} scores and {} labels",
                num_clips * num_tags,
                scores.len(),
                labels.len()
            )));
        }
        Ok(EvalTable {
            num_clips,
            num_tags,
            scores,
            labels,
        })
    }

    pub fn from_rows(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<Self> {
        let num_clips = scores.len();
        let num_tags = scores.first().map_or(0, Vec::len);
        if labels.len() != num_clips
            || scores.iter().any(|r| r.len() != num_tags)
            || labels.iter().any(|r| r.len() != num_tags)
        {
            return Err(Error::invalid("score and label rows must share one shape"));
        }
        EvalTable::new(num_clips, num_tags, scores.concat(), labels.concat())
    }

    pub fn num_clips(&self) -> usize {
        self.num_clips
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn clip_scores(&self, clip: usize) -> &[f64] {
        &self.scores[clip * self.num_tags..(clip + 1) * self.num_tags]
    }

    pub fn clip_labels(&self, clip: usize) -> &[bool] {
        &self.labels[clip * self.num_tags..(clip + 1) * self.num_tags]
    }

    pub fn tag_scores(&self, tag: usize) -> Vec<f64> {
        (0..self.num_clips).map(|c| self.scores[c * self.num_tags + tag]).collect()
    }

    pub fn tag_labels(&self, tag: usize) -> Vec<bool> {
        (0..self.num_clips).map(|c| self.labels[c * self.num_tags + tag]).collect()
    }

    pub fn transpose(&self) -> EvalTable {
        let (n, m) = (self.num_clips, self.num_tags);
        let mut scores = Vec::with_capacity(n * m);
        let mut labels = Vec::with_capacity(n * m);
        for t in 0..m {
            scores.extend(self.tag_scores(t));
            labels.extend(self.tag_labels(t));
        }
        EvalTable {
            num_clips: m,
            num_tags: n,
            scores,
            labels,
        }
    }
}

/// Mean of the defined values and the number left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averaged {
    pub mean: Option<f64>,
    pub undefined: usize,
}

impl Averaged {
    fn of(values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        Averaged {
            mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            undefined: values.len() - defined.len(),
        }
    }

    pub fn value(&self) -> f64 {
        self.mean.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub perclass_auc: Averaged,
    pub perclip_auc: Averaged,
    pub perclass_map: Averaged,
    pub perclip_map: Averaged,
    /// Per-tag AUC and AP, `None` where undefined.
    pub tag_auc: Vec<Option<f64>>,
    pub tag_ap: Vec<Option<f64>>,
}

impl Evaluation {
    /// One CSV row per tag: `tag,auc,ap` with empty cells for undefined values.
    pub fn tag_csv(&self, tag_names: &[String]) -> String {
        let mut s = String::from("tag,auc,ap\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, (a, p)) in self.tag_auc.iter().zip(&self.tag_ap).enumerate() {
            let name = tag_names.get(i).cloned().unwrap_or_else(|| format!("tag{i}"));
            let _ = writeln!(s, "{name},{},{}", cell(*a), cell(*p));
        }
        s
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate(table: &EvalTable) -> Result<Evaluation> {
    let mut tag_auc = Vec::with_capacity(table.num_tags);
    let mut tag_ap = Vec::with_capacity(table.num_tags);
    for t in 0..table.num_tags {
        let (s, l) = (table.tag_scores(t), table.tag_labels(t));
        tag_auc.push(defined(auc(&s, &l))?);
        tag_ap.push(defined(average_precision(&s, &l))?);
    }
    let mut clip_auc = Vec::with_capacity(table.num_clips);
    let mut clip_ap = Vec::with_capacity(table.num_clips);
    for c in 0..table.num_clips {
        let (s, l) = (table.clip_scores(c), table.clip_labels(c));
        clip_auc.push(defined(auc(s, l))?);
        clip_ap.push(defined(average_precision(s, l))?);
    }
    Ok(Evaluation {
        perclass_auc: Averaged::of(&tag_auc),
        perclip_auc: Averaged::of(&clip_auc),
        perclass_map: Averaged::of(&tag_ap),
        perclip_map: Averaged::of(&clip_ap),
        tag_auc,
        tag_ap,
    })
}
