//! Dense row-major matrices of `f64` and the GEMM kernels the model runs on.

use crate::exec::Exec;
use crate::{Error, Result};

/// Output rows per GEMM work unit. Fixed so the floating-point schedule is
/// the same for every execution policy.
const GEMM_ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2 {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Tensor2, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows gathered in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut out = Tensor2::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn hconcat(parts: &[&Tensor2]) -> Result<Tensor2> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Dimension(format!(
                "cannot concatenate {} rows with {rows} rows",
                p.rows
            )));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor2::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            let dst = out.row_mut(i);
            for p in parts {
                dst[off..off + p.cols].copy_from_slice(p.row(i));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn col_slice(&self, start: usize, width: usize) -> Tensor2 {
        let mut out = Tensor2::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy)]
enum Layout {
    Normal,
    Transposed,
}

struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    fn of(t: &'a Tensor2, layout: Layout) -> Self {
        match layout {
            Layout::Normal => View {
                data: &t.data,
                rows: t.rows,
                cols: t.cols,
                rs: t.cols as isize,
                cs: 1,
            },
            Layout::Transposed => View {
                data: &t.data,
                rows: t.cols,
                cols: t.rows,
                rs: 1,
                cs: t.cols as isize,
            },
        }
    }
}

/// `c = beta * c + op(a) * op(b)`
fn gemm(exec: Exec, a: View<'_>, b: View<'_>, beta: f64, c: &mut Tensor2) -> Result<()> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} by {}x{} into {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    let (k, n) = (a.cols, b.cols);
    if c.data.is_empty() {
        return Ok(());
    }
    if k == 0 {
        c.data.iter_mut().for_each(|x| *x *= beta);
        return Ok(());
    }
    exec.for_each_chunk_mut(&mut c.data, GEMM_ROW_CHUNK * n, |chunk, out| {
        let row0 = chunk * GEMM_ROW_CHUNK;
        let m = out.len() / n;
        let a_off = row0 as isize * a.rs;
        // SAFETY: the views describe in-bounds strided matrices; `out` is an
        // exclusive m x n row-major block.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr().offset(a_off),
                a.rs,
                a.cs,
                b.data.as_ptr(),
                b.rs,
                b.cs,
                beta,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
    Ok(())
}

/// `a * b`
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    let mut c = Tensor2::zeros(a.rows, b.cols);
    gemm(
        Exec::default(),
        View::of(a, Layout::Normal),
        View::of(b, Layout::Normal),
        0.0,
        &mut c,
    )?;
    Ok(c)
}

/// `a * b^T`
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    let mut c = Tensor2::zeros(a.rows, b.rows);
    gemm(
        Exec::default(),
        View::of(a, Layout::Normal),
        View::of(b, Layout::Transposed),
        0.0,
        &mut c,
    )?;
    Ok(c)
}

/// `c += a * b`
pub fn matmul_acc(a: &Tensor2, b: &Tensor2, c: &mut Tensor2) -> Result<()> {
    gemm(
        Exec::default(),
        View::of(a, Layout::Normal),
        View::of(b, Layout::Normal),
        1.0,
        c,
    )
}

/// `c += a^T * b`
pub fn matmul_tn_acc(a: &Tensor2, b: &Tensor2, c: &mut Tensor2) -> Result<()> {
    gemm(
        Exec::default(),
        View::of(a, Layout::Transposed),
        View::of(b, Layout::Normal),
        1.0,
        c,
    )
}

/// `c += a * b^T`
pub fn matmul_nt_acc(a: &Tensor2, b: &Tensor2, c: &mut Tensor2) -> Result<()> {
    gemm(
        Exec::default(),
        View::of(a, Layout::Normal),
        View::of(b, Layout::Transposed),
        1.0,
        c,
    )
}

/// GEMM with an explicit policy, for benchmarking both paths.
pub fn matmul_with(exec: Exec, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    let mut c = Tensor2::zeros(a.rows, b.cols);
    gemm(
        exec,
        View::of(a, Layout::Normal),
        View::of(b, Layout::Normal),
        0.0,
        &mut c,
    )?;
    Ok(c)
}
