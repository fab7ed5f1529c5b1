use super::Tensor;
use crate::error::{Error, Result};

const MR: usize = 4;
const NR: usize = 16;
const KC: usize = 256;

/// `c[n×m] += a[n×k] · b[k×m]`, all row-major.
///
/// Every output element accumulates its `k` products in ascending order no
/// matter how the loops are blocked, so the result matches the naive triple
/// loop bit for bit.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    for pc in (0..k).step_by(KC) {
        let kb = KC.min(k - pc);
        for jc in (0..m).step_by(NR) {
            let nb = NR.min(m - jc);
            let mut ic = 0;
            while ic < n {
                let mb = MR.min(n - ic);
                if mb == MR && nb == NR {
                    micro_kernel(a, b, c, k, m, ic, jc, pc, kb);
                } else {
                    for i in ic..ic + mb {
                        let crow = &mut c[i * m + jc..i * m + jc + nb];
                        for p in pc..pc + kb {
                            let aip = a[i * k + p];
                            let brow = &b[p * m + jc..p * m + jc + nb];
                            for (cv, bv) in crow.iter_mut().zip(brow) {
                                *cv += aip * bv;
                            }
                        }
                    }
                }
                ic += mb;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn micro_kernel(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    k: usize,
    m: usize,
    ic: usize,
    jc: usize,
    pc: usize,
    kb: usize,
) {
    let mut acc = [[0.0f64; NR]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(ic + r) * m + jc..(ic + r) * m + jc + NR]);
    }
    for p in pc..pc + kb {
        let brow: &[f64; NR] = b[p * m + jc..p * m + jc + NR].try_into().unwrap();
        for (r, row) in acc.iter_mut().enumerate() {
            let aip = a[(ic + r) * k + p];
            for x in 0..NR {
                row[x] += aip * brow[x];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(ic + r) * m + jc..(ic + r) * m + jc + NR].copy_from_slice(row);
    }
}

/// Matrix product of an N×K and a K×M tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.matrix_dims("matmul")?;
    let (k2, m) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.dims(), b.dims())));
    }
    let mut out = vec![0.0; n * m];
    gemm(a.data(), b.data(), &mut out, n, k, m);
    Tensor::from_vec(&[n, m], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (n, m) = a.matrix_dims("transpose")?;
    let src = a.data();
    let mut out = vec![0.0; n * m];
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (0..m).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(m) {
                    out[j * n + i] = src[i * m + j];
                }
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    let (_, m) = a.matrix_dims("softmax_rows")?;
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(m) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = 1.0 / total;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Scales every row to unit L2 norm. Rows whose norm is below `eps` become zero.
pub fn l2_normalize_rows(a: &Tensor, eps: f64) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (_, m) = a.matrix_dims("l2_normalize_rows")?;
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(m) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < eps {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(out)
}
