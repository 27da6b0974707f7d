/// `c[n×m] = op(a)[n×k] · op(b)[k×m] + beta · c`, all row-major.
///
/// With `trans_a` the slice `a` holds a `[k, n]` matrix; likewise `trans_b`
/// means `b` holds `[m, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    n: usize,
    k: usize,
    m: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), n * k);
    assert_eq!(b.len(), k * m);
    assert_eq!(c.len(), n * m);
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, n as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (m as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel can touch given
    // these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
