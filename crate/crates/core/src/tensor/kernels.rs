use super::Real;

/// `c (+)= op(a) * op(b)` for row-major operands, where `op(a)` is `m x k`
/// and `op(b)` is `k x n`. A transposed operand is stored in the opposite
/// orientation (`a` as `k x m`, `b` as `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: bounds asserted above; the strides index within m*k, k*n and m*n.
    unsafe {
        T::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Unfolds `[batch, len, ch]` into `[batch, len, ch * 3]` so that a kernel-3,
/// padding-1 convolution becomes a matrix product. Column `c * 3 + k` holds
/// `x[t + k - 1, c]`, zero outside the sequence.
pub(crate) fn im2col3<T: Real>(x: &[T], batch: usize, len: usize, ch: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); batch * len * ch * 3];
    for b in 0..batch {
        let xb = &x[b * len * ch..(b + 1) * len * ch];
        for t in 0..len {
            let row = &mut cols[(b * len + t) * ch * 3..(b * len + t + 1) * ch * 3];
            for k in 0..3 {
                let src = t as isize + k as isize - 1;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let src_row = &xb[src as usize * ch..(src as usize + 1) * ch];
                for (c, &v) in src_row.iter().enumerate() {
                    row[c * 3 + k] = v;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`]: accumulates column gradients back onto `dx`.
pub(crate) fn col2im3<T: Real>(dcols: &[T], dx: &mut [T], batch: usize, len: usize, ch: usize) {
    for b in 0..batch {
        for t in 0..len {
            let row = &dcols[(b * len + t) * ch * 3..(b * len + t + 1) * ch * 3];
            for k in 0..3 {
                let src = t as isize + k as isize - 1;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let base = (b * len + src as usize) * ch;
                for c in 0..ch {
                    dx[base + c] += row[c * 3 + k];
                }
            }
        }
    }
}

/// Strides of a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `axes[i]`.
pub(crate) fn permute<T: Real>(x: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(x[off]);
        // odometer increment over the output index
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
