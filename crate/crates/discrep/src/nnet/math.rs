//! Shared numeric kernels. The tape ops and the models' pure scoring paths
//! both call these, so the two paths agree bit-for-bit.

use super::tensor::Tensor;

/// `a (m x k) * b (k x n)`, inner sum in ascending k order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimension mismatch");
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// `a^T (k x m) * b (k x n)`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows(), b.rows(), "matmul_tn dimension mismatch");
    let (m, k, n) = (a.cols(), a.rows(), b.cols());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(p, i) * b.get(p, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// `a (m x k) * b^T (n x k)`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "matmul_nt dimension mismatch");
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(j, p);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Row vector (`1 x k`) times matrix (`k x n`), same inner order as
/// [`matmul`].
pub fn matvec(x: &[f64], w: &Tensor) -> Vec<f64> {
    assert_eq!(x.len(), w.rows(), "matvec dimension mismatch");
    let n = w.cols();
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (p, &xv) in x.iter().enumerate() {
            s += xv * w.get(p, j);
        }
        *o = s;
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// First-occurrence maximum of a row.
fn row_max(row: &[f64]) -> f64 {
    let mut m = row[0];
    for &v in &row[1..] {
        if v > m {
            m = v;
        }
    }
    m
}

/// In-place softmax with max subtraction; the row sums to 1 up to rounding.
pub fn softmax_row_in_place(row: &mut [f64]) {
    let m = row_max(row);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// In-place log-softmax with max subtraction.
pub fn log_softmax_row_in_place(row: &mut [f64]) {
    let m = row_max(row);
    let mut sum = 0.0;
    for &v in row.iter() {
        sum += (v - m).exp();
    }
    let lse = m + sum.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_known_product() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain_matmul() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(2, 4, (0..8).map(f64::from).collect()).unwrap();
        // a^T (3x2) * b (2x4)
        let tn = matmul_tn(&a, &b);
        assert_eq!(tn.shape(), (3, 4));
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|p| a.get(p, i) * b.get(p, j)).sum();
                assert_abs_diff_eq!(tn.get(i, j), want, epsilon = 1e-15);
            }
        }
        // a (2x3) * c^T where c is (4x3)
        let c = Tensor::from_vec(4, 3, (0..12).map(f64::from).collect()).unwrap();
        let nt = matmul_nt(&a, &c);
        assert_eq!(nt.shape(), (2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a.get(i, p) * c.get(j, p)).sum();
                assert_abs_diff_eq!(nt.get(i, j), want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn matvec_matches_matmul() {
        let w = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = [0.5, -1.0, 2.0];
        let got = matvec(&x, &w);
        let xm = Tensor::from_vec(1, 3, x.to_vec()).unwrap();
        let want = matmul(&xm, &w);
        assert_eq!(got, want.data());
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert!(softplus(800.0).is_finite());
        assert!(softplus(-800.0) >= 0.0);
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn softmax_row_sums_to_one() {
        let mut row = vec![1.0, 2.0, 3.0, -1e9];
        softmax_row_in_place(&mut row);
        let sum: f64 = row.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        assert_eq!(row[3], 0.0);
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let logits = vec![0.3, -0.7, 1.9, 0.0];
        let mut sm = logits.clone();
        softmax_row_in_place(&mut sm);
        let mut lsm = logits.clone();
        log_softmax_row_in_place(&mut lsm);
        for (a, b) in sm.iter().zip(&lsm) {
            assert_abs_diff_eq!(a.ln(), *b, epsilon = 1e-12);
        }
    }
}
