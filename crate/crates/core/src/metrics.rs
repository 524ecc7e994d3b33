//! Class-agnostic clustering and instance metrics: adjusted Rand index,
//! normalized and adjusted mutual information, and instance-level
//! precision/recall/mIoU under greedy IoU matching.
//!
//! All scores compare two labelings of the same points and are invariant
//! under relabeling of either argument. ARI, NMI and AMI are symmetric in
//! their arguments; precision and recall swap under argument swap, and mIoU
//! is averaged over the true instances, so it is not symmetric.

use std::collections::HashMap;

/// Cluster-overlap counts between two labelings.
///
/// `counts[i][j]` is the number of points carrying the i-th distinct
/// predicted label and the j-th distinct true label (distinct labels in
/// ascending order).
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    /// Row sums: points per predicted cluster.
    pub pred_sizes: Vec<u64>,
    /// Column sums: points per true cluster.
    pub true_sizes: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[u32], truth: &[u32]) -> Self {
        assert_eq!(pred.len(), truth.len(), "label vectors differ in length");
        assert!(!pred.is_empty(), "empty labelings have no contingency table");
        let index_of = |labels: &[u32]| -> (HashMap<u32, usize>, usize) {
            let mut distinct: Vec<u32> = labels.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            let map = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
            (map, distinct.len())
        };
        let (pred_idx, rows) = index_of(pred);
        let (true_idx, cols) = index_of(truth);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[pred_idx[&p]][true_idx[&t]] += 1;
        }
        let pred_sizes: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let mut true_sizes = vec![0u64; cols];
        for row in &counts {
            for (s, &c) in true_sizes.iter_mut().zip(row) {
                *s += c;
            }
        }
        Self {
            counts,
            pred_sizes,
            true_sizes,
            total: pred.len() as u64,
        }
    }
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// True when the two labelings induce the same partition of the points.
fn same_partition(table: &ContingencyTable) -> bool {
    table
        .counts
        .iter()
        .all(|row| row.iter().filter(|&&c| c > 0).count() <= 1)
        && table.pred_sizes.len() == table.true_sizes.len()
}

/// Adjusted Rand index in [-1, 1].
///
/// Pair-counting agreement between the partitions, corrected for chance.
/// When the chance-corrected denominator vanishes (for example both
/// labelings are a single cluster) the score is 1 for identical partitions
/// and 0 otherwise.
pub fn adjusted_rand_index(pred: &[u32], truth: &[u32]) -> f64 {
    assert!(pred.len() >= 2, "ARI needs at least two points");
    let table = ContingencyTable::new(pred, truth);
    let sum_ij: f64 = table
        .counts
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| choose2(c))
        .sum();
    let sum_a: f64 = table.pred_sizes.iter().map(|&a| choose2(a)).sum();
    let sum_b: f64 = table.true_sizes.iter().map(|&b| choose2(b)).sum();
    let expected = sum_a * sum_b / choose2(table.total);
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < f64::EPSILON * max_index.max(1.0) {
        return if same_partition(&table) { 1.0 } else { 0.0 };
    }
    (sum_ij - expected) / (max_index - expected)
}

fn entropy(sizes: &[u64], total: u64) -> f64 {
    let n = total as f64;
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let nij = c as f64;
            let a = table.pred_sizes[i] as f64;
            let b = table.true_sizes[j] as f64;
            mi += nij / n * (n * nij / (a * b)).ln();
        }
    }
    mi
}

/// Expected mutual information under the hypergeometric model of random
/// labelings with the observed cluster sizes.
fn expected_mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.total;
    // ln k! for k in 0..=n.
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for k in 1..=n as usize {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &table.pred_sizes {
        for &b in &table.true_sizes {
            let lo = 1.max((a + b).saturating_sub(n));
            let hi = a.min(b);
            for nij in lo..=hi {
                let nij_f = nij as f64;
                let term = nij_f / nf * (nf * nij_f / (a as f64 * b as f64)).ln();
                let ln_p = ln_fact[a as usize]
                    + ln_fact[b as usize]
                    + ln_fact[(n - a) as usize]
                    + ln_fact[(n - b) as usize]
                    - ln_fact[n as usize]
                    - ln_fact[nij as usize]
                    - ln_fact[(a - nij) as usize]
                    - ln_fact[(b - nij) as usize]
                    - ln_fact[(n + nij - a - b) as usize];
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// Normalized and adjusted mutual information, `(nmi, ami)`.
///
/// Both use the arithmetic mean of the two cluster entropies as the
/// normalizer. Identical partitions score 1; when either labeling is a
/// single cluster and the partitions differ, NMI is 0 and AMI is 0.
pub fn mutual_info_scores(pred: &[u32], truth: &[u32]) -> (f64, f64) {
    let table = ContingencyTable::new(pred, truth);
    if same_partition(&table) {
        return (1.0, 1.0);
    }
    let h_pred = entropy(&table.pred_sizes, table.total);
    let h_true = entropy(&table.true_sizes, table.total);
    let mean_h = 0.5 * (h_pred + h_true);
    if h_pred == 0.0 || h_true == 0.0 {
        return (0.0, 0.0);
    }
    let mi = mutual_information(&table);
    let nmi = mi / mean_h;
    let emi = expected_mutual_information(&table);
    let denom = mean_h - emi;
    let ami = if denom.abs() < 1e-15 {
        0.0
    } else {
        (mi - emi) / denom
    };
    (nmi, ami)
}

/// Instance precision, recall and mean IoU under greedy IoU matching.
///
/// Every predicted instance is paired with at most one true instance,
/// taking pairs in order of descending IoU (ties broken toward the lower
/// predicted label, then the lower true label) and keeping those with IoU
/// at least `iou_thresh`. Precision is matched over predicted instances,
/// recall is matched over true instances, and mIoU averages each true
/// instance's matched IoU (zero when unmatched).
pub fn instance_prf_miou(pred: &[u32], truth: &[u32], iou_thresh: f64) -> (f64, f64, f64) {
    let table = ContingencyTable::new(pred, truth);
    let rows = table.pred_sizes.len();
    let cols = table.true_sizes.len();

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let inter = table.counts[i][j] as f64;
            if inter == 0.0 {
                continue;
            }
            let union = table.pred_sizes[i] as f64 + table.true_sizes[j] as f64 - inter;
            pairs.push((inter / union, i, j));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut pred_used = vec![false; rows];
    let mut true_iou = vec![0.0f64; cols];
    let mut true_used = vec![false; cols];
    let mut matched = 0usize;
    for (iou, i, j) in pairs {
        if iou < iou_thresh {
            break;
        }
        if pred_used[i] || true_used[j] {
            continue;
        }
        pred_used[i] = true;
        true_used[j] = true;
        true_iou[j] = iou;
        matched += 1;
    }
    let precision = matched as f64 / rows as f64;
    let recall = matched as f64 / cols as f64;
    let miou = true_iou.iter().sum::<f64>() / cols as f64;
    (precision, recall, miou)
}
