//! Brute-force reference implementations. Deliberately naive: dense
//! matrices, pair enumeration, no shared code with the library.

use gfm_core::Graph;

pub fn adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut a = vec![vec![false; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

pub fn degree(a: &[Vec<bool>], u: usize) -> usize {
    a[u].iter().filter(|&&x| x).count()
}

pub fn clustering(a: &[Vec<bool>], u: usize) -> f64 {
    let nb: Vec<usize> = (0..a.len()).filter(|&v| a[u][v]).collect();
    if nb.len() < 2 {
        return 0.0;
    }
    let mut closed = 0usize;
    let mut pairs = 0usize;
    for i in 0..nb.len() {
        for j in i + 1..nb.len() {
            pairs += 1;
            if a[nb[i]][nb[j]] {
                closed += 1;
            }
        }
    }
    closed as f64 / pairs as f64
}

/// Core number = largest k whose k-core (repeated removal of nodes with
/// fewer than k surviving neighbours) still contains the node.
pub fn core_numbers(a: &[Vec<bool>]) -> Vec<usize> {
    let n = a.len();
    let mut core = vec![0usize; n];
    for k in 1..=n {
        let mut alive = vec![true; n];
        loop {
            let mut removed = false;
            for u in 0..n {
                if alive[u] && (0..n).filter(|&v| alive[v] && a[u][v]).count() < k {
                    alive[u] = false;
                    removed = true;
                }
            }
            if !removed {
                break;
            }
        }
        if !alive.iter().any(|&x| x) {
            break;
        }
        for u in 0..n {
            if alive[u] {
                core[u] = k;
            }
        }
    }
    core
}

/// Nodes within `radius` hops, via boolean powers of `I + A`.
pub fn ball(a: &[Vec<bool>], u: usize, radius: usize) -> Vec<usize> {
    let n = a.len();
    let mut reach = vec![false; n];
    reach[u] = true;
    for _ in 0..radius {
        let prev = reach.clone();
        for v in 0..n {
            if !reach[v] {
                reach[v] = (0..n).any(|w| prev[w] && a[w][v]);
            }
        }
    }
    (0..n).filter(|&v| reach[v]).collect()
}

/// `(vertices, edges, density)` of the subgraph induced by `nodes`.
pub fn induced(a: &[Vec<bool>], nodes: &[usize]) -> (usize, usize, f64) {
    let mut e = 0;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if a[nodes[i]][nodes[j]] {
                e += 1;
            }
        }
    }
    let v = nodes.len();
    let d = if v < 2 {
        0.0
    } else {
        e as f64 / (v * (v - 1) / 2) as f64
    };
    (v, e, d)
}

/// Column-stochastic transition matrix; dangling columns are left zero.
fn transition(a: &[Vec<bool>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m = vec![vec![0.0; n]; n];
    for u in 0..n {
        let d = degree(a, u);
        for v in 0..n {
            if a[u][v] {
                m[v][u] = 1.0 / d as f64;
            }
        }
    }
    m
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `p ← (1−d)/N + d (M p + dangling/N)` from the uniform vector.
pub fn pagerank_dense(a: &[Vec<bool>], damping: f64, iterations: usize) -> Vec<f64> {
    let n = a.len();
    let m = transition(a);
    let dangling: Vec<bool> = (0..n).map(|u| degree(a, u) == 0).collect();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..iterations {
        let walk = mat_vec(&m, &p);
        let lost: f64 = (0..n).filter(|&u| dangling[u]).map(|u| p[u]).sum();
        p = walk
            .iter()
            .map(|w| (1.0 - damping) / n as f64 + damping * (w + lost / n as f64))
            .collect();
    }
    p
}

/// `r ← c e_a + (1−c)(M r + dangling · e_a)` from `e_a`.
pub fn ppr_dense(a: &[Vec<bool>], anchor: usize, restart: f64, iterations: usize) -> Vec<f64> {
    let n = a.len();
    let m = transition(a);
    let mut r = vec![0.0; n];
    r[anchor] = 1.0;
    for _ in 0..iterations {
        let lost: f64 = (0..n).filter(|&u| degree(a, u) == 0).map(|u| r[u]).sum();
        let mut next: Vec<f64> = mat_vec(&m, &r).iter().map(|w| (1.0 - restart) * w).collect();
        next[anchor] += restart + (1.0 - restart) * lost;
        r = next;
    }
    r
}

/// Mann–Whitney AUC by counting every (positive, negative) pair.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Average rank by counting smaller and equal values.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&naive_ranks(x), &naive_ranks(y))
}

/// Best F1 over every threshold that changes the prediction set, scanning
/// every distinct score plus +∞.
pub fn exhaustive_f1(scores: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.push(f64::INFINITY);
    let f1 = |t: f64| {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= t, l) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    };
    let best = cands.iter().map(|&t| f1(t)).fold(0.0, f64::max);
    let mut argmax: Vec<f64> = cands.into_iter().filter(|&t| f1(t) == best).collect();
    argmax.sort_by(f64::total_cmp);
    argmax.dedup();
    (best, argmax)
}

/// TPR of the empirical ROC step function at `fpr`: the largest TPR among
/// operating points whose FPR does not exceed it.
pub fn tpr_at(scores: &[f64], labels: &[bool], fpr: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .filter_map(|&t| {
            let fp = scores.iter().zip(labels).filter(|(&s, &l)| !l && s >= t).count() as f64;
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count() as f64;
            (fp / neg <= fpr + 1e-15).then_some(tp / pos)
        })
        .fold(0.0, f64::max)
}
