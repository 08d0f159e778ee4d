//! Real symmetric embedding of Hermitian matrices.
//!
//! A Hermitian `H = A + iB` of order `n` maps to the real symmetric matrix
//! `[A -B; B A]` of order `2n`. The map is linear, preserves positive
//! semidefiniteness, and doubles every eigenvalue's multiplicity. Traces
//! satisfy `Re Tr(H X) = ½ Tr(emb(H) emb(X))`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// `[Re H, -Im H; Im H, Re H]`.
pub fn embed_hermitian(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`embed_hermitian`] on the structured subspace; on an
/// arbitrary symmetric input it returns the Hermitian matrix whose embedding
/// is the orthogonal projection of `m` onto that subspace.
pub fn extract_hermitian(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = m.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        let re = 0.25 * (m[(i, j)] + m[(i + n, j + n)] + m[(j, i)] + m[(j + n, i + n)]);
        let im = 0.25 * (m[(i + n, j)] - m[(i, j + n)] - m[(j + n, i)] + m[(j, i + n)]);
        Complex64::new(re, im)
    })
}

/// Replaces `m` by its projection onto embedded-Hermitian matrices.
pub fn project_structured(m: &mut DMatrix<f64>) {
    let n = m.nrows() / 2;
    // each unordered pair once, so no average reads an already written entry
    for i in 0..n {
        for j in i..n {
            let re = 0.25 * (m[(i, j)] + m[(i + n, j + n)] + m[(j, i)] + m[(j + n, i + n)]);
            let im = 0.25 * (m[(i + n, j)] - m[(i, j + n)] - m[(j + n, i)] + m[(j, i + n)]);
            m[(i, j)] = re;
            m[(j, i)] = re;
            m[(i + n, j + n)] = re;
            m[(j + n, i + n)] = re;
            m[(i + n, j)] = im;
            m[(j, i + n)] = im;
            m[(i, j + n)] = -im;
            m[(j + n, i)] = -im;
        }
    }
}

/// Two real vectors `u, w` with `emb(v vᴴ) = u uᵀ + w wᵀ`.
pub fn embed_rank_one(v: &[Complex64]) -> (DVector<f64>, DVector<f64>) {
    let n = v.len();
    let mut u = DVector::zeros(2 * n);
    let mut w = DVector::zeros(2 * n);
    for (i, z) in v.iter().enumerate() {
        u[i] = z.re;
        u[i + n] = z.im;
        w[i] = -z.im;
        w[i + n] = z.re;
    }
    (u, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn sample_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let g = DMatrix::from_fn(n, n, |_, _| Complex64::new(next(), next()));
        &g * g.adjoint()
    }

    #[test]
    fn round_trip_is_identity() {
        let h = sample_hermitian(4, 7);
        let back = extract_hermitian(&embed_hermitian(&h));
        assert!((back - h).norm() < 1e-14);
    }

    #[test]
    fn eigenvalues_come_in_pairs() {
        let h = sample_hermitian(3, 11);
        let e = SymmetricEigen::new(embed_hermitian(&h)).eigenvalues;
        let mut v: Vec<f64> = e.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in v.chunks(2) {
            assert!((pair[0] - pair[1]).abs() < 1e-12, "{v:?}");
        }
        let hv = SymmetricEigen::new(h.clone()).eigenvalues;
        let mut hv: Vec<f64> = hv.iter().copied().collect();
        hv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, lam) in hv.iter().enumerate() {
            assert!((lam - v[2 * k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_factors_match_embedding() {
        let v = vec![Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5), Complex64::new(-0.7, 0.1)];
        let vv = DMatrix::from_fn(3, 3, |i, j| v[i] * v[j].conj());
        let (u, w) = embed_rank_one(&v);
        let lhs = &u * u.transpose() + &w * w.transpose();
        assert!((lhs - embed_hermitian(&vv)).norm() < 1e-14);
    }

    #[test]
    fn trace_identity_holds() {
        let h = sample_hermitian(3, 3);
        let x = sample_hermitian(3, 5);
        let lhs = (&h * &x).trace().re;
        let rhs = 0.5 * (embed_hermitian(&h) * embed_hermitian(&x)).trace();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn projection_fixes_structured_matrices() {
        let h = sample_hermitian(3, 9);
        let mut m = embed_hermitian(&h);
        let before = m.clone();
        project_structured(&mut m);
        assert!((m - before).norm() < 1e-14);
    }

    #[test]
    fn projection_of_arbitrary_input_is_symmetric_and_idempotent() {
        let mut m = DMatrix::from_fn(6, 6, |i, j| ((7 * i + 3 * j) % 11) as f64 - 5.0);
        project_structured(&mut m);
        assert_eq!(m, m.transpose());
        let once = m.clone();
        project_structured(&mut m);
        assert_eq!(m, once);
        let h = extract_hermitian(&once);
        assert_eq!(h, h.adjoint());
        assert!((embed_hermitian(&h) - once).amax() < 1e-15);
    }
}
