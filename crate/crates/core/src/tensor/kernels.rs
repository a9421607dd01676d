//! Plain slice kernels for the 2-D products used by the graph.

use crate::scalar::Scalar;

/// `a [m×k] · b [k×n]`.
pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let bp = &b[p * n..(p + 1) * n];
            for (cij, &bpj) in ci.iter_mut().zip(bp) {
                *cij += aip * bpj;
            }
        }
    }
    c
}

/// `a [m×k] · bᵀ` with `b [n×k]`.
pub(crate) fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// `aᵀ · b` with `a [m×k]`, `b [m×n]`, giving `[k×n]`.
pub(crate) fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); k * n];
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let cp = &mut c[p * n..(p + 1) * n];
            for (cpj, &bij) in cp.iter_mut().zip(bi) {
                *cpj += aip * bij;
            }
        }
    }
    c
}

pub(crate) fn transpose<S: Scalar>(a: &[S], m: usize, n: usize) -> Vec<S> {
    let mut t = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}
