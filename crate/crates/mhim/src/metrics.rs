//! Evaluation metrics: AUC (Mann-Whitney with tie handling), accuracy/F1 at
//! the F1-optimal threshold, and mean/std aggregation across runs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("empty value list")]
    EmptyList,
    #[error("scores and labels differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) statistic with
/// midranks for ties; O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let (n_pos, n_neg) = check_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Midrank assignment over tie groups, ranks starting at 1.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fnn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s > threshold;
        match (pred, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    (tp, fp, tn, fnn)
}

fn f1_from(tp: usize, fp: usize, fnn: usize) -> f64 {
    let denom = 2 * tp + fp + fnn;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Candidate thresholds: midpoints between consecutive distinct sorted scores
/// plus -inf/+inf sentinels. The returned threshold maximizes F1; ties are
/// broken by higher accuracy, then lower threshold. Prediction rule is
/// `score > threshold`.
pub fn optimal_threshold(scores: &[f64], labels: &[u8]) -> Result<(f64, f64, f64)> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    check_classes(labels)?;
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    for w in sorted.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(f64::INFINITY);

    let n = scores.len() as f64;
    let mut best: Option<(f64, f64, f64)> = None;
    for &t in &candidates {
        let (tp, fp, _tn, fnn) = confusion_at(scores, labels, t);
        let f1 = f1_from(tp, fp, fnn);
        let acc = (scores.len() - fp - fnn) as f64 / n;
        let better = match best {
            None => true,
            Some((bt, bacc, bf1)) => {
                f1 > bf1 || (f1 == bf1 && (acc > bacc || (acc == bacc && t < bt)))
            }
        };
        if better {
            best = Some((t, acc, f1));
        }
    }
    let (t, acc, f1) = best.unwrap();
    Ok((t, acc, f1))
}

/// Arithmetic mean and sample (n-1) standard deviation; std is 0 for n=1.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<EvalResult> {
    let (n_pos, n_neg) = check_classes(labels)?;
    let auc = auc(scores, labels)?;
    let (threshold, accuracy, f1) = optimal_threshold(scores, labels)?;
    Ok(EvalResult {
        auc,
        accuracy,
        f1,
        threshold,
        n_pos,
        n_neg,
    })
}

/// O(n^2) Mann-Whitney pair-count reference. Test oracle for the sort-based
/// implementation; kept here so acceptance tests and unit tests share it.
pub fn auc_pair_count_oracle(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_classes(labels)?;
    let mut wins = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if li != 1 {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if i == j || lj != 0 {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}
