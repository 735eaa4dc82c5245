//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

pub mod gradcheck;

/// AUC by enumerating every positive/negative pair, ties worth one half.
pub fn naive_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                if si > sj {
                    credit += 1.0;
                } else if si == sj {
                    credit += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

/// AP as the mean over positives of precision at that positive's rank,
/// where the rank counts items with a higher score or an equal score and a
/// smaller index.
pub fn naive_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut sum = 0.0;
    let mut npos = 0usize;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        npos += 1;
        let rank = 1 + (0..scores.len()).filter(|&j| ahead(i, j)).count();
        let hits = 1 + (0..scores.len()).filter(|&j| labels[j] && ahead(i, j)).count();
        sum += hits as f64 / rank as f64;
    }
    (npos > 0).then(|| sum / npos as f64)
}

/// Mean of the defined entries, or `None` when none is defined.
pub fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

pub fn column<T: Copy>(rows: &[Vec<T>], j: usize) -> Vec<T> {
    rows.iter().map(|r| r[j]).collect()
}
