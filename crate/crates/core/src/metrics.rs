//! Evaluation metrics and embedding-space analyses.
//!
//! All neighbourhood analyses use exact brute-force cosine k-NN; ties at
//! equal distance go to the smaller node id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::graph::Labels;
use crate::tensor::{dot, l2_norm, Tensor2};
use crate::{Error, Result};

/// Number of points on the shared false-positive-rate grid.
pub const ROC_GRID: usize = 1001;

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney ROC-AUC. `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// True-positive rates on the uniform grid `fpr = i / (ROC_GRID − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub tpr: Vec<f64>,
    pub auc: f64,
}

pub fn fpr_grid() -> Vec<f64> {
    (0..ROC_GRID).map(|i| i as f64 / (ROC_GRID - 1) as f64).collect()
}

impl RocCurve {
    /// Wraps grid TPR values; the area is the trapezoid sum over the grid.
    pub fn from_tpr(tpr: Vec<f64>) -> Result<Self> {
        if tpr.len() != ROC_GRID {
            return Err(Error::Dimension(format!(
                "ROC curve needs {ROC_GRID} grid points, got {}",
                tpr.len()
            )));
        }
        let h = 1.0 / (ROC_GRID - 1) as f64;
        let auc = tpr.windows(2).map(|w| (w[0] + w[1]) * h / 2.0).sum();
        Ok(RocCurve { tpr, auc })
    }

    /// Empirical curve interpolated as a right-continuous step function: the
    /// TPR at grid point `x` is the highest TPR reached at FPR ≤ `x`.
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Option<Self> {
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            return None;
        }
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        // (fpr, tpr) after each group of tied scores
        let mut points = vec![(0.0, 0.0)];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < idx.len() {
            let s = scores[idx[i]];
            while i < idx.len() && scores[idx[i]] == s {
                if labels[idx[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
        let grid = fpr_grid();
        let mut tpr = Vec::with_capacity(ROC_GRID);
        let mut p = 0;
        for &x in &grid {
            while p + 1 < points.len() && points[p + 1].0 <= x + 1e-15 {
                p += 1;
            }
            tpr.push(points[p].1);
        }
        RocCurve::from_tpr(tpr).ok()
    }
}

/// Grid-wise mean of per-label curves. `None` for an empty input.
pub fn macro_roc(curves: &[RocCurve]) -> Option<RocCurve> {
    if curves.is_empty() {
        return None;
    }
    let mut tpr = vec![0.0; ROC_GRID];
    for c in curves {
        for (t, v) in tpr.iter_mut().zip(&c.tpr) {
            *t += v;
        }
    }
    let n = curves.len() as f64;
    tpr.iter_mut().for_each(|t| *t /= n);
    RocCurve::from_tpr(tpr).ok()
}

/// Binary F1 of `score ≥ threshold` predictions.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// F1-maximising threshold among the observed scores; ties go to the
/// highest threshold.
pub fn tune_threshold_f1(scores: &[f64], labels: &[bool]) -> f64 {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(|a, b| b.total_cmp(a));
    cands.dedup();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for t in cands {
        let f = f1_at(scores, labels, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    best.1
}

pub fn accuracy_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    correct as f64 / scores.len() as f64
}

/// Mean over labels of per-label accuracy; `scores[l]`, `labels[l]` and
/// `thresholds[l]` belong to label `l`.
pub fn accuracy_at_thresholds(scores: &[Vec<f64>], labels: &[Vec<bool>], thresholds: &[f64]) -> f64 {
    assert!(scores.len() == labels.len() && labels.len() == thresholds.len());
    if scores.is_empty() {
        return f64::NAN;
    }
    let sum: f64 = (0..scores.len())
        .map(|l| accuracy_at(&scores[l], &labels[l], thresholds[l]))
        .sum();
    sum / scores.len() as f64
}

/// Unweighted mean of the defined entries.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// One of the variables had constant ranks; `rho` is reported as 0.
    pub degenerate: bool,
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            rho: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        rho: sxy / (sxx * syy).sqrt(),
        degenerate: false,
    }
}

/// Spearman correlation: Pearson correlation of midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Correlation {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    if x.len() < 2 {
        return Correlation {
            rho: 0.0,
            degenerate: true,
        };
    }
    pearson(&midranks(x), &midranks(y))
}

fn cosine_rows(emb: &Tensor2) -> Tensor2 {
    let mut out = emb.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let n = l2_norm(r);
        if n > 0.0 {
            r.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Exact `k` nearest neighbours of every row by cosine distance, self
/// excluded, each list ordered by distance then node id. Returns the ids
/// and distances.
pub fn cosine_knn(emb: &Tensor2, k: usize, exec: Exec) -> Vec<Vec<(usize, f64)>> {
    let unit = cosine_rows(emb);
    let n = unit.rows();
    let k = k.min(n.saturating_sub(1));
    exec.map(n, |i| {
        let mut d: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, 1.0 - dot(unit.row(i), unit.row(j))))
            .collect();
        let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < d.len() {
            d.select_nth_unstable_by(k, by);
            d.truncate(k);
        }
        d.sort_by(by);
        d
    })
}

/// `1 / mean cosine distance` to each node's `k` nearest neighbours.
pub fn local_density(emb: &Tensor2, k: usize, exec: Exec) -> Vec<f64> {
    cosine_knn(emb, k, exec)
        .into_iter()
        .map(|nb| {
            let mean = nb.iter().map(|x| x.1).sum::<f64>() / nb.len() as f64;
            1.0 / mean
        })
        .collect()
}

/// Rank correlation between per-node label counts and local embedding
/// density.
pub fn density_multifunctionality_spearman(
    emb: &Tensor2,
    label_counts: &[usize],
    k: usize,
    exec: Exec,
) -> Result<Correlation> {
    let n = emb.rows();
    if label_counts.len() != n {
        return Err(Error::Dimension(format!(
            "{} label counts for {n} embeddings",
            label_counts.len()
        )));
    }
    if n <= k || k == 0 {
        return Err(Error::Config(format!(
            "density needs more than k = {k} nodes, got {n}"
        )));
    }
    let density = local_density(emb, k, exec);
    let counts: Vec<f64> = label_counts.iter().map(|&c| c as f64).collect();
    Ok(spearman(&counts, &density))
}

/// For each `k`, the mean over positive nodes of the positive fraction among
/// their `k` nearest neighbours. `k` is capped at `N − 1`.
pub fn same_label_enrichment(
    emb: &Tensor2,
    label: &[bool],
    k_grid: &[usize],
    exec: Exec,
) -> Result<Vec<(usize, f64)>> {
    let n = emb.rows();
    if label.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} embeddings",
            label.len()
        )));
    }
    let positives: Vec<usize> = (0..n).filter(|&i| label[i]).collect();
    if positives.len() < 2 {
        return Err(Error::Config(
            "enrichment needs at least two positive nodes".into(),
        ));
    }
    let kmax = k_grid.iter().copied().max().unwrap_or(0).min(n - 1);
    let knn = cosine_knn(emb, kmax, exec);
    Ok(k_grid
        .iter()
        .map(|&k| {
            let k = k.min(n - 1).max(1);
            let total: f64 = positives
                .iter()
                .map(|&i| knn[i][..k].iter().filter(|nb| label[nb.0]).count() as f64 / k as f64)
                .sum();
            (k, total / positives.len() as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoEnrichmentMatrix {
    /// Label ids in display order.
    pub labels: Vec<usize>,
    /// Entry `(r, c)` relates `labels[r]` (anchors) to `labels[c]`.
    pub values: Tensor2,
    pub ratio: bool,
}

impl CoEnrichmentMatrix {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            s.push_str(&format!("\t{l}"));
        }
        s.push('\n');
        for (r, l) in self.labels.iter().enumerate() {
            s.push_str(&l.to_string());
            for v in self.values.row(r) {
                s.push_str(&format!("\t{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Mean fraction of each anchor label's k-NN neighbourhood annotated with
/// every other anchor label, optionally divided by that label's prevalence;
/// rows and columns ordered by average-linkage clustering.
pub fn co_enrichment(
    emb: &Tensor2,
    labels: &Labels,
    anchor_labels: &[usize],
    k: usize,
    ratio: bool,
    exec: Exec,
) -> Result<CoEnrichmentMatrix> {
    let n = emb.rows();
    if labels.rows() != n {
        return Err(Error::Dimension(format!(
            "{} label rows for {n} embeddings",
            labels.rows()
        )));
    }
    if n < 2 || k == 0 {
        return Err(Error::Config("co-enrichment needs k ≥ 1 and two nodes".into()));
    }
    let cols: Vec<Vec<bool>> = anchor_labels.iter().map(|&l| labels.column(l)).collect();
    for (i, c) in cols.iter().enumerate() {
        if !c.iter().any(|&b| b) {
            return Err(Error::Config(format!(
                "label {} has no positive node",
                anchor_labels[i]
            )));
        }
    }
    let knn = cosine_knn(emb, k, exec);
    let p = anchor_labels.len();
    let mut m = Tensor2::zeros(p, p);
    for a in 0..p {
        let anchors: Vec<usize> = (0..n).filter(|&i| cols[a][i]).collect();
        for b in 0..p {
            let mut total = 0.0;
            for &i in &anchors {
                let hits = knn[i].iter().filter(|nb| cols[b][nb.0]).count();
                total += hits as f64 / knn[i].len() as f64;
            }
            let mut v = total / anchors.len() as f64;
            if ratio {
                let prevalence = cols[b].iter().filter(|&&x| x).count() as f64 / n as f64;
                v /= prevalence;
            }
            m.set(a, b, v);
        }
    }
    let order = average_linkage_order(&symmetrize(&m));
    let mut values = Tensor2::zeros(p, p);
    for (r, &a) in order.iter().enumerate() {
        for (c, &b) in order.iter().enumerate() {
            values.set(r, c, m.get(a, b));
        }
    }
    Ok(CoEnrichmentMatrix {
        labels: order.iter().map(|&i| anchor_labels[i]).collect(),
        values,
        ratio,
    })
}

pub fn symmetrize(m: &Tensor2) -> Tensor2 {
    let t = m.transpose();
    let mut s = m.clone();
    s.add_scaled(&t, 1.0);
    s.map(|v| v / 2.0)
}

/// Leaf order of the average-linkage (UPGMA) dendrogram over the rows of
/// `m` under Euclidean distance. Merges take the closest pair, ties by
/// cluster id; traversal visits the smaller subtree first.
pub fn average_linkage_order(m: &Tensor2) -> Vec<usize> {
    let p = m.rows();
    if p == 0 {
        return Vec::new();
    }
    let euclid = |a: usize, b: usize| -> f64 {
        m.row(a)
            .iter()
            .zip(m.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    // cluster id → (size, children)
    let mut size: Vec<usize> = vec![1; p];
    let mut children: Vec<Option<(usize, usize)>> = vec![None; p];
    let mut active: Vec<usize> = (0..p).collect();
    let mut dist: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for a in 0..p {
        for b in a + 1..p {
            dist.insert((a, b), euclid(a, b));
        }
    }
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    while active.len() > 1 {
        let mut best: Option<((usize, usize), f64)> = None;
        for (i, &a) in active.iter().enumerate() {
            for &b in &active[i + 1..] {
                let d = dist[&key(a, b)];
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((key(a, b), d));
                }
            }
        }
        let ((a, b), _) = best.expect("two active clusters");
        let c = size.len();
        size.push(size[a] + size[b]);
        children.push(Some((a, b)));
        active.retain(|&x| x != a && x != b);
        for &o in &active {
            let d = (size[a] as f64 * dist[&key(a, o)] + size[b] as f64 * dist[&key(b, o)])
                / (size[a] + size[b]) as f64;
            dist.insert(key(o, c), d);
        }
        active.push(c);
    }
    let mut order = Vec::with_capacity(p);
    let mut stack = vec![active[0]];
    while let Some(c) = stack.pop() {
        match children[c] {
            None => order.push(c),
            Some((a, b)) => {
                let (first, second) = match size[a].cmp(&size[b]) {
                    Ordering::Greater => (b, a),
                    _ => (a, b),
                };
                stack.push(second);
                stack.push(first);
            }
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumMean {
    pub mean: f64,
    pub count: usize,
}

/// Unweighted mean AUC per stratum over labels with a defined AUC. Strata
/// without any such label are absent from the result.
pub fn stratified_auc(aucs: &[Option<f64>], strata: &[String]) -> Result<BTreeMap<String, StratumMean>> {
    if aucs.len() != strata.len() {
        return Err(Error::Dimension(format!(
            "{} AUC values for {} stratum assignments",
            aucs.len(),
            strata.len()
        )));
    }
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (auc, s) in aucs.iter().zip(strata) {
        if let Some(a) = auc {
            let e = acc.entry(s.clone()).or_insert((0.0, 0));
            e.0 += a;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, (sum, n))| {
            (
                k,
                StratumMean {
                    mean: sum / n as f64,
                    count: n,
                },
            )
        })
        .collect())
}
