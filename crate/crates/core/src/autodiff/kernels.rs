//! Dense row-major kernels shared by the forward and backward passes.

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `da += dc · bᵀ` with `dc: m×n`, `b: k×n`, `da: m×k`.
pub(crate) fn matmul_nt_acc(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        let da_row = &mut da[i * k..(i + 1) * k];
        for (p, dv) in da_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *dv += dot(dc_row, b_row);
        }
    }
}

/// `db += aᵀ · dc` with `a: m×k`, `dc: m×n`, `db: k×n`.
pub(crate) fn matmul_tn_acc(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for (dv, g) in db_row.iter_mut().zip(dc_row) {
                *dv += a_ip * g;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `log Σ exp(row)` with max subtraction.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 1.0];
        let mut c = [0.0; 2];
        matmul_acc(&a, &b, &mut c, 2, 2, 1);
        assert_eq!(c, [3.0, 7.0]);
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        // a: 2x3, b: 3x2
        let a = [1.0, -2.0, 0.5, 3.0, 1.5, -1.0];
        let b = [2.0, 0.0, -1.0, 4.0, 0.25, 1.0];
        let dc = [1.0, 2.0, -3.0, 0.5];
        let mut da = [0.0; 6];
        matmul_nt_acc(&dc, &b, &mut da, 2, 3, 2);
        // explicit: bT is 2x3
        let bt = [2.0, -1.0, 0.25, 0.0, 4.0, 1.0];
        let mut expect = [0.0; 6];
        matmul_acc(&dc, &bt, &mut expect, 2, 2, 3);
        assert_eq!(da, expect);

        let mut db = [0.0; 6];
        matmul_tn_acc(&a, &dc, &mut db, 2, 3, 2);
        let at = [1.0, 3.0, -2.0, 1.5, 0.5, -1.0];
        let mut expect = [0.0; 6];
        matmul_acc(&at, &dc, &mut expect, 3, 2, 2);
        assert_eq!(db, expect);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
