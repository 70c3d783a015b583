//! Logistic-regression probes on frozen embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{evaluate_scores, EvalReport, FewShotRow};
use crate::exec::Exec;
use crate::graph::{Labels, SplitTag};
use crate::metrics::{mean_defined, roc_auc};
use crate::tensor::{dot, Tensor2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// L2 strength on the weights (not the bias).
    pub l2: f64,
    /// Full-batch gradient-descent iterations.
    pub iterations: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            iterations: 500,
        }
    }
}

/// Per-column centring and scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor2, rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &Tensor2, rows: &[usize]) -> Tensor2 {
        let mut out = Tensor2::zeros(rows.len(), x.cols());
        for (r, &i) in rows.iter().enumerate() {
            for (k, (o, v)) in out.row_mut(r).iter_mut().zip(x.row(i)).enumerate() {
                *o = (v - self.mean[k]) / self.scale[k];
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n`, slightly inflated so that
/// `1 / L` is a safe step.
fn smoothness_bound(x: &Tensor2) -> f64 {
    let (n, d) = x.shape();
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 1.0;
    for _ in 0..60 {
        let mut w = vec![0.0; d + 1];
        for i in 0..n {
            let r = x.row(i);
            let xv = dot(r, &v[..d]) + v[d];
            for (wk, rk) in w.iter_mut().zip(r) {
                *wk += xv * rk;
            }
            w[d] += xv;
        }
        w.iter_mut().for_each(|x| *x /= n as f64);
        lambda = dot(&w, &w).sqrt();
        if lambda == 0.0 {
            return 1.0;
        }
        v = w.into_iter().map(|x| x / lambda).collect();
    }
    lambda * 1.05
}

/// Weights and bias of an L2-regularised logistic regression on already
/// standardised rows, by full-batch gradient descent with step
/// `1 / (L/4 + λ)` from zero.
pub fn fit_logistic(x: &Tensor2, y: &[bool], config: &ProbeConfig, lipschitz: f64) -> (Vec<f64>, f64) {
    let (n, d) = x.shape();
    let lr = 1.0 / (0.25 * lipschitz + config.l2);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..config.iterations {
        gw.iter_mut().zip(&w).for_each(|(g, wk)| *g = config.l2 * wk);
        let mut gb = 0.0;
        for i in 0..n {
            let r = x.row(i);
            let t = if y[i] { 1.0 } else { 0.0 };
            let e = (sigmoid(dot(r, &w) + b) - t) / n as f64;
            for (g, rk) in gw.iter_mut().zip(r) {
                *g += e * rk;
            }
            gb += e;
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= lr * g;
        }
        b -= lr * gb;
    }
    (w, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub standardizer: Standardizer,
    /// `None` for labels without both classes among the training rows.
    pub labels: Vec<Option<LabelProbe>>,
}

impl ProbeModel {
    /// Positive-class probabilities of `label` for every row of `emb`.
    pub fn scores(&self, emb: &Tensor2, label: usize) -> Option<Vec<f64>> {
        let p = self.labels.get(label)?.as_ref()?;
        let rows: Vec<usize> = (0..emb.rows()).collect();
        let x = self.standardizer.apply(emb, &rows);
        Some(
            (0..x.rows())
                .map(|i| sigmoid(dot(x.row(i), &p.weights) + p.bias))
                .collect(),
        )
    }
}

fn check_shapes(emb: &Tensor2, labels: &Labels, split: &[SplitTag]) -> Result<()> {
    if labels.rows() != emb.rows() || split.len() != emb.rows() {
        return Err(Error::Dimension(format!(
            "{} embeddings, {} label rows, {} split entries",
            emb.rows(),
            labels.rows(),
            split.len()
        )));
    }
    Ok(())
}

fn nodes_with(split: &[SplitTag], tag: SplitTag) -> Vec<usize> {
    (0..split.len()).filter(|&i| split[i] == tag).collect()
}

/// Fits one probe per label on `train_rows` and returns scores for every
/// node (`None` for labels whose training rows hold one class only).
fn fit_and_score(
    emb: &Tensor2,
    columns: &[Vec<bool>],
    train_rows: &[Vec<usize>],
    config: &ProbeConfig,
    exec: Exec,
) -> (Vec<Option<(LabelProbe, Vec<f64>)>>, Vec<Standardizer>) {
    let fits = exec.map(columns.len(), |l| {
        let rows = &train_rows[l];
        let std = Standardizer::fit(emb, rows);
        let y: Vec<bool> = rows.iter().map(|&i| columns[l][i]).collect();
        if !(y.iter().any(|&b| b) && y.iter().any(|&b| !b)) {
            return (None, std);
        }
        let x = std.apply(emb, rows);
        let (w, b) = fit_logistic(&x, &y, config, smoothness_bound(&x));
        let all: Vec<usize> = (0..emb.rows()).collect();
        let xa = std.apply(emb, &all);
        let scores = (0..xa.rows()).map(|i| sigmoid(dot(xa.row(i), &w) + b)).collect();
        let probe = LabelProbe {
            weights: w,
            bias: b,
            threshold: f64::NAN,
        };
        (Some((probe, scores)), std)
    });
    let (a, b): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    (a, b)
}

/// One-vs-rest probes fitted on the training split, thresholds tuned on
/// validation, metrics on test.
pub fn zero_shot_probe(
    emb: &Tensor2,
    labels: &Labels,
    split: &[SplitTag],
    config: &ProbeConfig,
    exec: Exec,
) -> Result<(ProbeModel, EvalReport)> {
    check_shapes(emb, labels, split)?;
    let train = nodes_with(split, SplitTag::Train);
    if train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    let columns: Vec<Vec<bool>> = (0..labels.num_labels()).map(|l| labels.column(l)).collect();
    let train_rows = vec![train.clone(); columns.len()];
    let (fits, _) = fit_and_score(emb, &columns, &train_rows, config, exec);
    let standardizer = Standardizer::fit(emb, &train);
    let scores: Vec<Option<Vec<f64>>> = fits.iter().map(|f| f.as_ref().map(|x| x.1.clone())).collect();
    let mut report = evaluate_scores("zero-shot", &scores, &columns, split)?;
    let probes = fits
        .into_iter()
        .zip(&report.labels)
        .map(|(f, r)| {
            f.map(|(mut p, _)| {
                p.threshold = r.threshold.unwrap_or(f64::NAN);
                p
            })
        })
        .collect();
    report.config = serde_json::to_value(config).expect("probe config serializes");
    Ok((
        ProbeModel {
            standardizer,
            labels: probes,
        },
        report,
    ))
}

/// Stream for one `(seed, K, label)` draw.
fn few_shot_rng(seed: u64, k: usize, label: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((k as u64) << 32) ^ label as u64);
    rng
}

/// Test ROC-AUC of probes trained on `K` positives and `K` negatives per
/// label, averaged over labels and then summarised over `seeds`.
pub fn few_shot_curve(
    emb: &Tensor2,
    labels: &Labels,
    split: &[SplitTag],
    k_grid: &[usize],
    seeds: &[u64],
    config: &ProbeConfig,
    exec: Exec,
) -> Result<Vec<FewShotRow>> {
    check_shapes(emb, labels, split)?;
    if let Some(&k) = k_grid.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!("few-shot K must be positive, got {k}")));
    }
    if seeds.is_empty() {
        return Err(Error::Config(
            "few-shot evaluation needs at least one seed".into(),
        ));
    }
    let train = nodes_with(split, SplitTag::Train);
    let test = nodes_with(split, SplitTag::Test);
    let columns: Vec<Vec<bool>> = (0..labels.num_labels()).map(|l| labels.column(l)).collect();
    let mut rows = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        // labels with enough examples of both classes and a usable test set
        let eligible: Vec<usize> = (0..columns.len())
            .filter(|&l| {
                let pos = train.iter().filter(|&&i| columns[l][i]).count();
                let test_pos = test.iter().filter(|&&i| columns[l][i]).count();
                pos >= k && train.len() - pos >= k && test_pos > 0 && test_pos < test.len()
            })
            .collect();
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let train_rows: Vec<Vec<usize>> = eligible
                .iter()
                .map(|&l| {
                    let mut rng = few_shot_rng(seed, k, l);
                    let mut pos: Vec<usize> = train.iter().copied().filter(|&i| columns[l][i]).collect();
                    let mut neg: Vec<usize> = train.iter().copied().filter(|&i| !columns[l][i]).collect();
                    pos.shuffle(&mut rng);
                    neg.shuffle(&mut rng);
                    let mut r: Vec<usize> = pos[..k].iter().chain(&neg[..k]).copied().collect();
                    r.sort_unstable();
                    r
                })
                .collect();
            let cols: Vec<Vec<bool>> = eligible.iter().map(|&l| columns[l].clone()).collect();
            let (fits, _) = fit_and_score(emb, &cols, &train_rows, config, exec);
            let aucs: Vec<Option<f64>> = fits
                .iter()
                .zip(&cols)
                .map(|(f, col)| {
                    let s = &f.as_ref()?.1;
                    let ts: Vec<f64> = test.iter().map(|&i| s[i]).collect();
                    let tl: Vec<bool> = test.iter().map(|&i| col[i]).collect();
                    roc_auc(&ts, &tl)
                })
                .collect();
            if let Some(m) = mean_defined(&aucs) {
                per_seed.push(m);
            }
        }
        let n = per_seed.len();
        let (mean, sd) = if n == 0 {
            (None, None)
        } else {
            let mean = per_seed.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (Some(mean), Some(sd))
        };
        rows.push(FewShotRow {
            k,
            mean,
            sd,
            n_valid_labels: eligible.len(),
            n_skipped_labels: columns.len() - eligible.len(),
            seeds: n,
        });
    }
    Ok(rows)
}

/// Convenience: the few-shot table wrapped in a report.
pub fn few_shot_report(
    emb: &Tensor2,
    labels: &Labels,
    split: &[SplitTag],
    k_grid: &[usize],
    seeds: &[u64],
    config: &ProbeConfig,
    exec: Exec,
) -> Result<EvalReport> {
    let rows = few_shot_curve(emb, labels, split, k_grid, seeds, config, exec)?;
    let mut report = EvalReport::empty("few-shot");
    report.few_shot = rows;
    report.config = serde_json::json!({
        "probe": config,
        "k_grid": k_grid,
        "seeds": seeds,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::LabelStatus;
    use rand::Rng;

    /// Two Gaussian blobs along the first axis; label = blob.
    fn blobs(n: usize, d: usize, gap: f64, seed: u64) -> (Tensor2, Labels, Vec<SplitTag>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor2::zeros(n, d);
        let mut classes = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            classes.push(c);
            for k in 0..d {
                let noise: f64 = rng.gen_range(-1.0..1.0);
                x.set(i, k, noise + if k == 0 { gap * c as f64 } else { 0.0 });
            }
        }
        let split = (0..n)
            .map(|i| match i % 10 {
                0..=5 => SplitTag::Train,
                6 | 7 => SplitTag::Valid,
                _ => SplitTag::Test,
            })
            .collect();
        (x, Labels::one_hot(&classes, 2), split)
    }

    #[test]
    fn separable_blobs_are_perfect() {
        let (x, l, s) = blobs(120, 6, 5.0, 1);
        let (probe, report) = zero_shot_probe(&x, &l, &s, &ProbeConfig::default(), Exec::Seq).unwrap();
        assert_eq!(report.mean_auc, Some(1.0));
        assert_eq!(report.n_valid, 2);
        let sc = probe.scores(&x, 0).unwrap();
        assert!(sc.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_class_label_is_invalid() {
        let (x, _, s) = blobs(40, 3, 5.0, 2);
        let l = Labels::new(40, 2, (0..80).map(|k| k % 2 == 0 || k % 4 == 1).collect()).unwrap();
        let (probe, report) = zero_shot_probe(&x, &l, &s, &ProbeConfig::default(), Exec::Seq).unwrap();
        assert!(probe.labels[0].is_none());
        assert_eq!(report.labels[0].status, LabelStatus::TrainSingleClass);
        assert_eq!(report.n_valid, 1);
        assert_eq!(report.mean_auc, report.labels[1].auc);
    }

    #[test]
    fn parallel_and_sequential_fits_agree() {
        let (x, l, s) = blobs(80, 5, 1.0, 3);
        let a = zero_shot_probe(&x, &l, &s, &ProbeConfig::default(), Exec::Seq).unwrap();
        let b = zero_shot_probe(&x, &l, &s, &ProbeConfig::default(), Exec::Par).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn few_shot_table_shape_and_limits() {
        let (x, l, s) = blobs(100, 4, 5.0, 4);
        let rows = few_shot_curve(
            &x,
            &l,
            &s,
            &[1, 5, 10, 20],
            &[1, 2],
            &ProbeConfig::default(),
            Exec::Seq,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].n_valid_labels, 2);
        // 60 training nodes, 30 per class: K = 30 uses the full training split
        let full = few_shot_curve(&x, &l, &s, &[30], &[7], &ProbeConfig::default(), Exec::Seq).unwrap();
        let (_, zs) = zero_shot_probe(&x, &l, &s, &ProbeConfig::default(), Exec::Seq).unwrap();
        assert!((full[0].mean.unwrap() - zs.mean_auc.unwrap()).abs() < 1e-12);
        let too_big = few_shot_curve(&x, &l, &s, &[31], &[7], &ProbeConfig::default(), Exec::Seq).unwrap();
        assert_eq!(too_big[0].n_valid_labels, 0);
        assert_eq!(too_big[0].mean, None);
        assert!(few_shot_curve(&x, &l, &s, &[0], &[1], &ProbeConfig::default(), Exec::Seq).is_err());
    }
}
