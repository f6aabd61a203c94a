//! Dense products routed through one GEMM kernel. Every output column depends
//! only on the matching input column, bit for bit, whatever the batch width,
//! so batched and single-patch results agree exactly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// `a · b` for arbitrarily strided views.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    let mut c = Array2::<f64>::zeros((m, n));
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = (a.strides()[0], a.strides()[1]);
    let (rsb, csb) = (b.strides()[0], b.strides()[1]);
    let (rsc, csc) = (c.strides()[0], c.strides()[1]);
    // SAFETY: pointers and strides come from live ndarray views whose shapes
    // were checked above; `c` is uniquely owned.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
    c
}

/// `a · v`, computed as a one-column product.
pub fn matvec(a: ArrayView2<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    matmul(a, v.insert_axis(Axis(1))).remove_axis(Axis(1))
}

/// Singular values in descending order.
pub fn singular_values(a: ArrayView2<f64>) -> Vec<f64> {
    let (m, n) = a.dim();
    let dm = nalgebra::DMatrix::from_fn(m, n, |i, j| a[[i, j]]);
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// One-based index of the last singular value at or above `fraction` of the
/// largest; 0 for an empty or all-zero spectrum.
pub fn spectrum_elbow(sv: &[f64], fraction: f64) -> usize {
    let Some(&top) = sv.first() else { return 0 };
    if !(top > 0.0) {
        return 0;
    }
    sv.iter()
        .rposition(|&s| s >= fraction * top)
        .map_or(0, |i| i + 1)
}
