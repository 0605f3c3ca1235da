//! Row-chunked matrix kernels.
//!
//! Work is split into fixed-size row chunks, so every output element and
//! every partial sum is computed the same way whatever the thread count;
//! partial sums are then added in chunk order.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};
use rayon::prelude::*;

use super::Real;

const ROW_CHUNK: usize = 256;
const REDUCE_CHUNK: usize = 1024;

/// `a * b`.
pub fn matmul<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    out.axis_chunks_iter_mut(Axis(0), ROW_CHUNK)
        .into_par_iter()
        .zip(a.axis_chunks_iter(Axis(0), ROW_CHUNK).into_par_iter())
        .for_each(|(mut o, a)| general_mat_mul(T::one(), &a, &b, T::zero(), &mut o));
    out
}

/// `a^T * b`, reducing over the shared row dimension.
pub fn matmul_tn<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let partials: Vec<Array2<T>> = a
        .axis_chunks_iter(Axis(0), REDUCE_CHUNK)
        .into_par_iter()
        .zip(b.axis_chunks_iter(Axis(0), REDUCE_CHUNK).into_par_iter())
        .map(|(a, b)| a.t().dot(&b))
        .collect();
    ordered_sum(partials).unwrap_or_else(|| Array2::zeros((a.ncols(), b.ncols())))
}

/// `a * b^T`.
pub fn matmul_nt<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    matmul(a, b.t())
}

/// Column sums.
pub fn col_sum<T: Real>(a: ArrayView2<T>) -> Array1<T> {
    let partials: Vec<Array1<T>> = a
        .axis_chunks_iter(Axis(0), REDUCE_CHUNK)
        .into_par_iter()
        .map(|c| c.sum_axis(Axis(0)))
        .collect();
    ordered_sum(partials).unwrap_or_else(|| Array1::zeros(a.ncols()))
}

/// Column sums of the elementwise product `a * b`.
pub fn col_dot<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array1<T> {
    let partials: Vec<Array1<T>> = a
        .axis_chunks_iter(Axis(0), REDUCE_CHUNK)
        .into_par_iter()
        .zip(b.axis_chunks_iter(Axis(0), REDUCE_CHUNK).into_par_iter())
        .map(|(a, b)| (&a * &b).sum_axis(Axis(0)))
        .collect();
    ordered_sum(partials).unwrap_or_else(|| Array1::zeros(a.ncols()))
}

fn ordered_sum<A>(parts: Vec<A>) -> Option<A>
where
    A: for<'a> std::ops::AddAssign<&'a A>,
{
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        acc += &p;
    }
    Some(acc)
}

/// Applies `f` to every row, over row chunks in parallel.
pub fn for_rows<T: Real>(a: &mut Array2<T>, f: impl Fn(ArrayViewMut1<T>) + Sync) {
    a.axis_chunks_iter_mut(Axis(0), ROW_CHUNK)
        .into_par_iter()
        .for_each(|mut chunk| chunk.outer_iter_mut().for_each(&f));
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn mat(r: usize, c: usize, s: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| ((i * 31 + j * 17) % 23) as f64 * s - 1.0)
    }

    #[test]
    fn kernels_match_naive_products() {
        let a = mat(700, 5, 0.1);
        let b = mat(5, 9, 0.07);
        let c = mat(700, 9, 0.03);
        assert!((matmul(a.view(), b.view()) - a.dot(&b)).iter().all(|d| d.abs() < 1e-12));
        assert!((matmul_tn(a.view(), c.view()) - a.t().dot(&c)).iter().all(|d| d.abs() < 1e-9));
        assert!((matmul_nt(c.view(), b.view()) - c.dot(&b.t())).iter().all(|d| d.abs() < 1e-12));
        assert!((col_sum(c.view()) - c.sum_axis(Axis(0))).iter().all(|d| d.abs() < 1e-9));
        assert!((col_dot(c.view(), c.view()) - (&c * &c).sum_axis(Axis(0)))
            .iter()
            .all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let a = mat(3000, 40, 0.013);
        let b = mat(3000, 30, 0.021);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| (matmul_tn(a.view(), b.view()), col_sum(b.view())))
        };
        assert_eq!(run(1), run(4));
    }
}
