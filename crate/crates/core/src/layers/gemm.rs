//! Row-major dense products used by the convolution kernels.
//!
//! Accumulation order matters: every output element is summed over the
//! inner index in ascending order, starting from whatever is already in `c`.

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m x k] += a[m x p] * b[k x p]^T`
pub(crate) fn gemm_abt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, k: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * p..(i + 1) * p];
        for j in 0..k {
            let b_row = &b[j * p..(j + 1) * p];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * k + j] += acc;
        }
    }
}
