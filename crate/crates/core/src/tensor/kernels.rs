// Raw row-major matrix kernels. Callers guarantee slice lengths.

use super::Scalar;

/// Inner product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// `c[m×n] += a[m×k] · b[k×n]`
///
/// Full blocks of `MR` rows go through a register-tiled micro-kernel that
/// reuses each loaded row of `b` for all of them. Each output still sums
/// over `p` in order, so a row's result does not depend on its block.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let full = m - m % MR;
    let nfull = n - n % NR;
    let mut panel = vec![T::zero(); MR * k];
    for i in (0..full).step_by(MR) {
        for p in 0..k {
            for r in 0..MR {
                panel[p * MR + r] = a[(i + r) * k + p];
            }
        }
        for j in (0..nfull).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for (ap, brow) in panel.chunks_exact(MR).zip(b.chunks_exact(n)) {
                let ap: &[T; MR] = ap.try_into().expect("panel");
                let bp: &[T; NR] = brow[j..j + NR].try_into().expect("row");
                for r in 0..MR {
                    for l in 0..NR {
                        acc[r][l] = acc[r][l] + ap[r] * bp[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let cr = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                for l in 0..NR {
                    cr[l] = cr[l] + row[l];
                }
            }
        }
        for r in i..i + MR {
            for j in nfull..n {
                let mut s = T::zero();
                for p in 0..k {
                    s = s + a[r * k + p] * b[p * n + j];
                }
                c[r * n + j] = c[r * n + j] + s;
            }
        }
    }
    for i in full..m {
        let mut acc = vec![T::zero(); n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(av, &b[p * n..(p + 1) * n], &mut acc);
        }
        for (cj, s) in c[i * n..(i + 1) * n].iter_mut().zip(acc) {
            *cj = *cj + s;
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            *cj = *cj + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(av, brow, &mut c[i * n..(i + 1) * n]);
        }
    }
}
