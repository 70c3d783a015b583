//! Oracles and checks shared by the integration tests and the acceptance
//! runner. Each suite returns `Ok(summary)` or `Err(first failures)`.

#![allow(dead_code)]

pub mod oracles;
pub mod suites;

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gfm_core::Tensor2;

/// Counts comparisons and keeps the first few mismatches.
#[derive(Default)]
pub struct Tally {
    pub checked: usize,
    pub failed: usize,
    notes: Vec<String>,
}

impl Tally {
    pub fn fail(&mut self, note: String) {
        self.failed += 1;
        if self.notes.len() < 8 {
            self.notes.push(note);
        }
    }

    pub fn eq<T: PartialEq + Debug>(&mut self, what: impl FnOnce() -> String, got: T, want: T) {
        self.checked += 1;
        if got != want {
            self.fail(format!("{}: got {got:?}, want {want:?}", what()));
        }
    }

    pub fn close(&mut self, what: impl FnOnce() -> String, got: f64, want: f64, tol: f64) {
        self.checked += 1;
        if !((got - want).abs() <= tol) {
            self.fail(format!("{}: got {got:e}, want {want:e} (tol {tol:e})", what()));
        }
    }

    pub fn truth(&mut self, what: impl FnOnce() -> String, ok: bool) {
        self.checked += 1;
        if !ok {
            self.fail(what());
        }
    }

    pub fn merge(&mut self, other: Tally) {
        self.checked += other.checked;
        self.failed += other.failed;
        for n in other.notes {
            if self.notes.len() < 8 {
                self.notes.push(n);
            }
        }
    }

    pub fn finish(self, summary: String) -> Result<String, String> {
        if self.failed == 0 {
            Ok(format!("{summary}; {} comparisons", self.checked))
        } else {
            Err(format!(
                "{} of {} comparisons failed: {}",
                self.failed,
                self.checked,
                self.notes.join(" | ")
            ))
        }
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut m = random_matrix(rows, cols, seed);
    for i in 0..rows {
        let r = m.row_mut(i);
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    m
}
