//! Row-blocked execution helpers. With the `parallel` feature the blocks are
//! distributed over a rayon pool; without it they run in order on one thread.
//! Blocking and reduction order are fixed independently of the thread count,
//! so results are bitwise identical across both paths.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per work item for matrix products and grid kernels.
pub const ROW_BLOCK: usize = 16;

/// Execution strategy selector; `Auto` follows the crate feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Auto,
    Sequential,
}

/// Runs `body` over the items of `work`, in parallel when allowed.
pub fn dispatch<T: Send, F: Fn(T) + Sync + Send>(mode: ExecMode, work: Vec<T>, body: F) {
    match mode {
        ExecMode::Sequential => work.into_iter().for_each(body),
        ExecMode::Auto => {
            #[cfg(feature = "parallel")]
            {
                work.into_par_iter().for_each(body);
            }
            #[cfg(not(feature = "parallel"))]
            {
                work.into_iter().for_each(body);
            }
        }
    }
}

/// Maps `body` over `work` preserving item order in the output.
pub fn dispatch_map<T: Send, R: Send, F: Fn(T) -> R + Sync + Send>(
    mode: ExecMode,
    work: Vec<T>,
    body: F,
) -> Vec<R> {
    match mode {
        ExecMode::Sequential => work.into_iter().map(body).collect(),
        ExecMode::Auto => {
            #[cfg(feature = "parallel")]
            {
                work.into_par_iter().map(body).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                work.into_iter().map(body).collect()
            }
        }
    }
}

/// Splits a mutable view into row blocks that inherit its lifetime.
fn split_rows_mut<'a>(
    mut v: ArrayViewMut2<'a, f64>,
    size: usize,
) -> Vec<ArrayViewMut2<'a, f64>> {
    let mut blocks = Vec::with_capacity(v.nrows() / size + 1);
    while v.nrows() > size {
        let (head, tail) = v.split_at(Axis(0), size);
        blocks.push(head);
        v = tail;
    }
    blocks.push(v);
    blocks
}

/// Shared-view counterpart of [`split_rows_mut`].
fn split_rows<'a>(mut v: ArrayView2<'a, f64>, size: usize) -> Vec<ArrayView2<'a, f64>> {
    let mut blocks = Vec::with_capacity(v.nrows() / size + 1);
    while v.nrows() > size {
        let (head, tail) = v.split_at(Axis(0), size);
        blocks.push(head);
        v = tail;
    }
    blocks.push(v);
    blocks
}

/// `a * b` with the row range of `a` split into fixed blocks.
pub fn matmul_mode(mode: ExecMode, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
    let mut out = Array2::zeros((m, n));
    let work: Vec<(ArrayViewMut2<f64>, ArrayView2<f64>)> = split_rows_mut(out.view_mut(), ROW_BLOCK)
        .into_iter()
        .zip(split_rows(a, ROW_BLOCK))
        .collect();
    dispatch(mode, work, |(mut ob, ab)| {
        ob.assign(&ab.dot(&b));
    });
    out
}

/// `a * b` under the feature-selected execution mode.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    matmul_mode(ExecMode::Auto, a, b)
}

/// Elementwise kernel over aligned row blocks of several arrays.
///
/// `body` receives one block of every output followed by one block of every
/// input; all arrays must share one shape. Blocks never overlap, so the body
/// may write its outputs freely.
pub fn zip_rows_mode<'a, F>(
    mode: ExecMode,
    outs: Vec<ArrayViewMut2<'a, f64>>,
    ins: Vec<ArrayView2<'a, f64>>,
    body: F,
) where
    F: Fn(&mut [ArrayViewMut2<f64>], &[ArrayView2<f64>]) + Sync + Send,
{
    let shape = match outs.first() {
        Some(o) => o.dim(),
        None => return,
    };
    for o in &outs {
        assert_eq!(o.dim(), shape, "zip_rows output shape mismatch");
    }
    for i in &ins {
        assert_eq!(i.dim(), shape, "zip_rows input shape mismatch");
    }
    let n_blocks = ((shape.0 + ROW_BLOCK - 1) / ROW_BLOCK).max(1);
    let mut out_blocks: Vec<Vec<ArrayViewMut2<f64>>> = (0..n_blocks).map(|_| Vec::new()).collect();
    for o in outs {
        for (bi, blk) in split_rows_mut(o, ROW_BLOCK).into_iter().enumerate() {
            out_blocks[bi].push(blk);
        }
    }
    let mut in_blocks: Vec<Vec<ArrayView2<f64>>> = (0..n_blocks).map(|_| Vec::new()).collect();
    for i in ins {
        for (bi, blk) in split_rows(i, ROW_BLOCK).into_iter().enumerate() {
            in_blocks[bi].push(blk);
        }
    }
    let work: Vec<(Vec<ArrayViewMut2<f64>>, Vec<ArrayView2<f64>>)> =
        out_blocks.into_iter().zip(in_blocks).collect();
    dispatch(mode, work, |(mut ob, ib)| body(&mut ob, &ib));
}

/// [`zip_rows_mode`] under the feature-selected execution mode.
pub fn zip_rows<'a, F>(outs: Vec<ArrayViewMut2<'a, f64>>, ins: Vec<ArrayView2<'a, f64>>, body: F)
where
    F: Fn(&mut [ArrayViewMut2<f64>], &[ArrayView2<f64>]) + Sync + Send,
{
    zip_rows_mode(ExecMode::Auto, outs, ins, body)
}

/// Sum of all entries; per-row partial sums are combined in row order.
pub fn grid_sum_mode(mode: ExecMode, g: &Array2<f64>) -> f64 {
    let rows: Vec<ndarray::ArrayView1<f64>> = g.outer_iter().collect();
    let partials = dispatch_map(mode, rows, |row| row.iter().sum::<f64>());
    partials.iter().sum()
}

/// Sum of all entries under the feature-selected execution mode.
pub fn grid_sum(g: &Array2<f64>) -> f64 {
    grid_sum_mode(ExecMode::Auto, g)
}

/// Maximum entry; `NaN` entries propagate to the result.
pub fn grid_max(g: &Array2<f64>) -> f64 {
    let nan_max = |acc: f64, x: f64| {
        if acc.is_nan() || x.is_nan() {
            f64::NAN
        } else {
            acc.max(x)
        }
    };
    let rows: Vec<ndarray::ArrayView1<f64>> = g.outer_iter().collect();
    let partials = dispatch_map(ExecMode::Auto, rows, |row| {
        row.iter().fold(f64::NEG_INFINITY, |acc, &x| nan_max(acc, x))
    });
    partials
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &x| nan_max(acc, x))
}

/// Maximum absolute entry (0 for empty grids, NaN-propagating).
pub fn grid_max_abs(g: &Array2<f64>) -> f64 {
    let nan_max = |acc: f64, x: f64| {
        if acc.is_nan() || x.is_nan() {
            f64::NAN
        } else {
            acc.max(x)
        }
    };
    let rows: Vec<ndarray::ArrayView1<f64>> = g.outer_iter().collect();
    let partials = dispatch_map(ExecMode::Auto, rows, |row| {
        row.iter().fold(0.0_f64, |acc, &x| nan_max(acc, x.abs()))
    });
    partials.iter().fold(0.0_f64, |acc, &x| nan_max(acc, x))
}

/// Convenience: `out = f(a, b)` elementwise.
pub fn zip2_into(
    out: &mut Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64 + Sync + Send,
) {
    zip_rows(
        vec![out.view_mut()],
        vec![a.view(), b.view()],
        |outs, ins| {
            for ((o, &a), &b) in outs[0].iter_mut().zip(ins[0].iter()).zip(ins[1].iter()) {
                *o = f(a, b);
            }
        },
    );
}
