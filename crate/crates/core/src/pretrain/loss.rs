//! Contrastive and smoothing objectives with their analytic gradients.

use crate::graph::Graph;
use crate::tensor::{self, Tensor2};
use crate::{Error, Result};

/// Candidate set of the InfoNCE denominators.
#[derive(Debug, Clone, PartialEq)]
pub enum NegativeBank {
    /// Every node of the graph.
    Full,
    /// The listed nodes; each pair's own positive is always added.
    Sampled(Vec<usize>),
}

/// A scalar loss and its gradients with respect to the full `g` and `z`
/// matrices.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad_g: Tensor2,
    pub grad_z: Tensor2,
}

/// Gradient of `−log softmax(logits)[target]` over `allowed` columns,
/// written into `probs` (entries outside `allowed` are zero). Returns the loss.
fn softmax_xent(logits: &[f64], allowed: &dyn Fn(usize) -> bool, target: usize, probs: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (k, &l) in logits.iter().enumerate() {
        if allowed(k) && l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for (k, &l) in logits.iter().enumerate() {
        probs[k] = if allowed(k) { (l - max).exp() } else { 0.0 };
        sum += probs[k];
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    let loss = max + sum.ln() - logits[target];
    probs[target] -= 1.0;
    loss
}

/// Symmetric InfoNCE over `(anchor i, positive j)` pairs:
/// `−½ [log softmax_k(g_i·z_k/τ)[j] + log softmax_k(z_j·g_k/τ)[i]]`, averaged
/// over pairs. `g` and `z` hold every node of the graph.
pub fn infonce_symmetric(
    g: &Tensor2,
    z: &Tensor2,
    pairs: &[(usize, usize)],
    bank: &NegativeBank,
    tau: f64,
) -> Result<LossGrad> {
    infonce_symmetric_with(g, z, pairs, bank, tau, false)
}

/// As [`infonce_symmetric`]; with `detach_bank` the denominator entries act
/// as constants and gradients reach only anchor and positive rows.
pub fn infonce_symmetric_with(
    g: &Tensor2,
    z: &Tensor2,
    pairs: &[(usize, usize)],
    bank: &NegativeBank,
    tau: f64,
    detach_bank: bool,
) -> Result<LossGrad> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if g.shape() != z.shape() {
        return Err(Error::Dimension(format!(
            "graph stream {:?} and text stream {:?} differ",
            g.shape(),
            z.shape()
        )));
    }
    let n = g.rows();
    if pairs.is_empty() || n == 0 {
        return Err(Error::Config("InfoNCE needs at least one pair".into()));
    }
    if let NegativeBank::Sampled(idx) = bank {
        if idx.is_empty() {
            return Err(Error::Config("empty negative bank".into()));
        }
    }
    let in_bank: Vec<bool> = match bank {
        NegativeBank::Full => vec![true; n],
        NegativeBank::Sampled(idx) => {
            let mut m = vec![false; n];
            for &k in idx {
                m[k] = true;
            }
            m
        }
    };
    let anchors: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let positives: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let ga = g.select_rows(&anchors);
    let zp = z.select_rows(&positives);
    let inv_tau = 1.0 / tau;
    // logits against every node; columns outside the bank are masked
    let s1 = tensor::matmul_nt(&ga, z)?;
    let s2 = tensor::matmul_nt(&zp, g)?;
    let b = pairs.len();
    let mut p1 = Tensor2::zeros(b, n);
    let mut p2 = Tensor2::zeros(b, n);
    let mut total = 0.0;
    let mut logits = vec![0.0; n];
    for (r, &(i, j)) in pairs.iter().enumerate() {
        logits
            .iter_mut()
            .zip(s1.row(r))
            .for_each(|(l, s)| *l = s * inv_tau);
        let forward = softmax_xent(&logits, &|k| in_bank[k] || k == j, j, p1.row_mut(r));
        logits
            .iter_mut()
            .zip(s2.row(r))
            .for_each(|(l, s)| *l = s * inv_tau);
        let backward = softmax_xent(&logits, &|k| in_bank[k] || k == i, i, p2.row_mut(r));
        // summed per pair so swapping the streams gives the same bits
        total += forward + backward;
    }
    let scale = inv_tau / (2.0 * b as f64);
    // p1/p2 now hold softmax − onehot. Direction 1 touches g_i and every z_k,
    // direction 2 touches z_j and every g_k.
    let mut grad_g = Tensor2::zeros(n, g.cols());
    let mut grad_z = Tensor2::zeros(n, z.cols());
    let d_ga = tensor::matmul(&p1, z)?;
    let d_zp = tensor::matmul(&p2, g)?;
    if detach_bank {
        for (r, &(i, j)) in pairs.iter().enumerate() {
            let (a, b) = (p1.get(r, j), p2.get(r, i));
            for (d, s) in grad_z.row_mut(j).iter_mut().zip(ga.row(r)) {
                *d += a * s;
            }
            for (d, s) in grad_g.row_mut(i).iter_mut().zip(zp.row(r)) {
                *d += b * s;
            }
        }
    } else {
        tensor::matmul_tn_acc(&p1, &ga, &mut grad_z)?;
        tensor::matmul_tn_acc(&p2, &zp, &mut grad_g)?;
    }
    for (r, &(i, j)) in pairs.iter().enumerate() {
        for (d, s) in grad_g.row_mut(i).iter_mut().zip(d_ga.row(r)) {
            *d += s;
        }
        for (d, s) in grad_z.row_mut(j).iter_mut().zip(d_zp.row(r)) {
            *d += s;
        }
    }
    grad_g.data_mut().iter_mut().for_each(|x| *x *= scale);
    grad_z.data_mut().iter_mut().for_each(|x| *x *= scale);
    Ok(LossGrad {
        value: total / (2.0 * b as f64),
        grad_g,
        grad_z,
    })
}

/// `λ / |E| · Σ_{(u,v) ∈ E} ‖g_u − g_v‖²`, each undirected edge once. Zero
/// for an edgeless graph. Only `grad_g` is populated.
pub fn laplacian_smoothing(g: &Tensor2, graph: &Graph, lambda: f64) -> Result<(f64, Tensor2)> {
    if g.rows() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} nodes",
            g.rows(),
            graph.node_count()
        )));
    }
    let mut grad = Tensor2::zeros(g.rows(), g.cols());
    let e = graph.edge_count();
    if e == 0 {
        return Ok((0.0, grad));
    }
    let c = lambda / e as f64;
    let mut sum = 0.0;
    for (u, v) in graph.edges() {
        for k in 0..g.cols() {
            let d = g.get(u, k) - g.get(v, k);
            sum += d * d;
            grad.row_mut(u)[k] += 2.0 * c * d;
            grad.row_mut(v)[k] -= 2.0 * c * d;
        }
    }
    Ok((c * sum, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_gnp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(n: usize, d: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor2::zeros(n, d);
        for i in 0..n {
            let r = t.row_mut(i);
            r.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            let norm = tensor::l2_norm(r);
            r.iter_mut().for_each(|x| *x /= norm);
        }
        t
    }

    #[test]
    fn uniform_similarities_give_log_bank_size() {
        let g = Tensor2::filled(7, 3, 1.0 / 3f64.sqrt());
        let z = g.clone();
        let out = infonce_symmetric(&g, &z, &[(0, 1), (2, 5)], &NegativeBank::Full, 0.1).unwrap();
        assert!((out.value - 7f64.ln()).abs() < 1e-9);
        let out = infonce_symmetric(&g, &z, &[(0, 1)], &NegativeBank::Sampled(vec![2, 3, 4]), 0.1).unwrap();
        assert!((out.value - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn four_candidate_closed_form() {
        let plus = vec![1.0, 0.0];
        let minus = vec![-1.0, 0.0];
        let g = Tensor2::from_rows(&[plus.clone(), minus.clone(), minus.clone(), minus.clone()]).unwrap();
        let z = Tensor2::from_rows(&[minus.clone(), plus, minus.clone(), minus]).unwrap();
        let out = infonce_symmetric(&g, &z, &[(0, 1)], &NegativeBank::Full, 0.1).unwrap();
        let expected = (3.0 * (-20f64).exp()).ln_1p();
        assert!(
            (out.value - expected).abs() < 1e-12,
            "{} vs {expected}",
            out.value
        );
    }

    #[test]
    fn swapping_streams_leaves_the_loss_unchanged() {
        let g = unit_rows(9, 4, 1);
        let z = unit_rows(9, 4, 2);
        let pairs = [(0, 3), (4, 4), (8, 1)];
        let a = infonce_symmetric(&g, &z, &pairs, &NegativeBank::Full, 0.1).unwrap();
        let swapped: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
        let b = infonce_symmetric(&z, &g, &swapped, &NegativeBank::Full, 0.1).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert!(a.value >= 0.0);
    }

    #[test]
    fn infonce_gradients_match_differences() {
        let g = unit_rows(6, 3, 3);
        let z = unit_rows(6, 3, 4);
        let pairs = [(0, 2), (3, 1), (5, 5)];
        for bank in [NegativeBank::Full, NegativeBank::Sampled(vec![1, 4])] {
            let out = infonce_symmetric(&g, &z, &pairs, &bank, 0.5).unwrap();
            let eps = 1e-5;
            for which in 0..2 {
                for k in 0..18 {
                    let mut gp = g.clone();
                    let mut zp = z.clone();
                    let mut gm = g.clone();
                    let mut zm = z.clone();
                    if which == 0 {
                        gp.data_mut()[k] += eps;
                        gm.data_mut()[k] -= eps;
                    } else {
                        zp.data_mut()[k] += eps;
                        zm.data_mut()[k] -= eps;
                    }
                    let fp = infonce_symmetric(&gp, &zp, &pairs, &bank, 0.5).unwrap().value;
                    let fm = infonce_symmetric(&gm, &zm, &pairs, &bank, 0.5).unwrap().value;
                    let fd = (fp - fm) / (2.0 * eps);
                    let an = if which == 0 {
                        out.grad_g.data()[k]
                    } else {
                        out.grad_z.data()[k]
                    };
                    assert!((fd - an).abs() < 1e-7, "{bank:?} {which} {k}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn detached_bank_keeps_value_and_pair_rows_only() {
        let g = unit_rows(6, 3, 3);
        let z = unit_rows(6, 3, 4);
        let pairs = [(0, 2)];
        let full = infonce_symmetric(&g, &z, &pairs, &NegativeBank::Full, 0.5).unwrap();
        let det = infonce_symmetric_with(&g, &z, &pairs, &NegativeBank::Full, 0.5, true).unwrap();
        assert_eq!(full.value, det.value);
        assert_eq!(full.grad_g.row(0), det.grad_g.row(0));
        assert_eq!(full.grad_z.row(2), det.grad_z.row(2));
        assert!(det.grad_z.row(4).iter().all(|&v| v == 0.0));
        assert!(det.grad_g.row(5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_bank_is_an_error() {
        let g = unit_rows(3, 2, 1);
        assert!(infonce_symmetric(&g, &g, &[(0, 1)], &NegativeBank::Sampled(vec![]), 0.1).is_err());
        assert!(infonce_symmetric(&g, &g, &[], &NegativeBank::Full, 0.1).is_err());
    }

    #[test]
    fn laplacian_fixtures() {
        let (g, _) = Graph::from_edges(2, [(0, 1)]).unwrap();
        let same = Tensor2::filled(2, 3, 0.4);
        assert_eq!(laplacian_smoothing(&same, &g, 5e-3).unwrap().0, 0.0);
        let x = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!((laplacian_smoothing(&x, &g, 5e-3).unwrap().0 - 5e-3).abs() < 1e-18);
        let (empty, _) = Graph::from_edges(2, []).unwrap();
        assert_eq!(laplacian_smoothing(&x, &empty, 5e-3).unwrap().0, 0.0);
    }

    #[test]
    fn laplacian_gradient_matches_differences() {
        let graph = generate_gnp(10, 0.3, 8).unwrap();
        let g = unit_rows(10, 3, 5);
        let (_, grad) = laplacian_smoothing(&g, &graph, 0.7).unwrap();
        let eps = 1e-6;
        for k in 0..30 {
            let mut p = g.clone();
            p.data_mut()[k] += eps;
            let mut m = g.clone();
            m.data_mut()[k] -= eps;
            let fd = (laplacian_smoothing(&p, &graph, 0.7).unwrap().0
                - laplacian_smoothing(&m, &graph, 0.7).unwrap().0)
                / (2.0 * eps);
            assert!((fd - grad.data()[k]).abs() < 1e-8);
        }
    }
}
