//! Dense complex matrix helpers shared by the channel and circuit code.
//!
//! Everything here works on small matrices (2x2 up to ~1024x1024 for the
//! brute-force oracles), so plain dense `nalgebra` storage is used
//! throughout.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const TOL_STRUCT: f64 = 1e-10;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

/// 2x2 Pauli matrices in the order [I, X, Y, Z].
pub fn paulis() -> [CMat; 4] {
    let i = identity(2);
    let x = CMat::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)]);
    let y = CMat::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)]);
    let z = CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)]);
    [i, x, y, z]
}

/// All 4^k k-qubit Pauli tensor products, with the single-qubit order
/// [I, X, Y, Z] on the most significant qubit first.
pub fn pauli_basis(k: usize) -> Vec<CMat> {
    let single = paulis();
    let mut out = vec![identity(1)];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * 4);
        for m in &out {
            for p in &single {
                next.push(m.kronecker(p));
            }
        }
        out = next;
    }
    out
}

/// exp(i theta (v . sigma)) for a unit 3-vector v.
pub fn rotation_unitary(theta: f64, v: [f64; 3]) -> CMat {
    let [_, x, y, z] = paulis();
    let h = x * cr(v[0]) + y * cr(v[1]) + z * cr(v[2]);
    identity(2) * cr(theta.cos()) + h * c(0.0, theta.sin())
}

pub fn frobenius_dist(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm()
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|e| e.re.is_finite() && e.im.is_finite())
}

pub fn hermiticity_error(m: &CMat) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn unitarity_error(m: &CMat) -> f64 {
    (m.adjoint() * m - identity(m.nrows())).norm()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns. The
/// input is symmetrized first so callers may pass matrices that are
/// Hermitian only up to roundoff.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let sym = (m + m.adjoint()) * cr(0.5);
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Hermitian square root of a PSD matrix. Eigenvalues slightly negative from
/// roundoff are clamped to zero.
pub fn sqrt_psd(m: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut d = CMat::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        d[(i, i)] = cr(v.max(0.0).sqrt());
    }
    &vecs * d * vecs.adjoint()
}

/// Diagonalize a unitary matrix: returns `(eigenphases, eigenvectors)` with
/// phases in (-pi, pi].
///
/// A unitary is normal, so it is diagonalized by the common eigenbasis of
/// the commuting Hermitian pair (U+U')/2 and (U-U')/(2i). A generic linear
/// combination of the two has simple spectrum; if a degenerate combination
/// is hit, retry with a different mixing angle and verify reconstruction.
pub fn unitary_eigen(u: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = u.nrows();
    let herm = (u + u.adjoint()) * cr(0.5);
    let skew = (u - u.adjoint()) * c(0.0, -0.5);
    // Deterministic sequence of mixing angles, irrational-ish to dodge
    // symmetric spectra.
    for t in [0.6180339887498949f64, 1.234567891, 0.1122334455, 2.71828] {
        let mix = &herm * cr(t.cos()) + &skew * cr(t.sin());
        let (_, vecs) = hermitian_eigen(&mix);
        let d = vecs.adjoint() * u * &vecs;
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off = off.max(d[(i, j)].norm());
                }
            }
        }
        if off < 1e-9 {
            let phases: Vec<f64> = (0..n).map(|i| d[(i, i)].arg()).collect();
            return Ok((phases, vecs));
        }
    }
    Err(Error::Consistency(
        "failed to diagonalize unitary (degenerate mixing)".into(),
    ))
}

/// Principal matrix logarithm of a unitary, divided by i: returns the
/// Hermitian generator H with U = exp(iH) and eigenphases in (-pi, pi].
pub fn unitary_log_generator(u: &CMat) -> Result<CMat> {
    let (phases, vecs) = unitary_eigen(u)?;
    let n = u.nrows();
    let mut d = CMat::zeros(n, n);
    for (i, &p) in phases.iter().enumerate() {
        d[(i, i)] = cr(p);
    }
    Ok(&vecs * d * vecs.adjoint())
}

/// Trace inner product tr(a' b).
pub fn hs_inner(a: &CMat, b: &CMat) -> Complex64 {
    (a.adjoint() * b).trace()
}

/// Partial trace over one qudit of a d^k-dimensional register, with a
/// single-qudit operator applied to that qudit first: tr_t[(op_t) rho].
/// The result keeps the remaining k-1 qudits in their original order.
pub fn trace_out_with_op(rho: &CMat, op: &CMat, target: usize, k: usize, d: usize) -> CMat {
    let dim_post = d.pow((k - 1 - target) as u32);
    let dim_pre = d.pow(target as u32);
    let rest = dim_pre * dim_post;
    let mut out = CMat::zeros(rest, rest);
    let idx = |pre: usize, t: usize, post: usize| (pre * d + t) * dim_post + post;
    for rpre in 0..dim_pre {
        for rpost in 0..dim_post {
            let row = rpre * dim_post + rpost;
            for cpre in 0..dim_pre {
                for cpost in 0..dim_post {
                    let col = cpre * dim_post + cpost;
                    let mut acc = Complex64::ZERO;
                    for a in 0..d {
                        for b in 0..d {
                            acc += op[(a, b)] * rho[(idx(rpre, b, rpost), idx(cpre, a, cpost))];
                        }
                    }
                    out[(row, col)] = acc;
                }
            }
        }
    }
    out
}

/// Embed a matrix on the remaining qudits back to the full register with a
/// fresh single-qudit state |0><0| at `target`.
pub fn insert_ground_at(rest: &CMat, target: usize, k: usize, d: usize) -> CMat {
    let dim_post = d.pow((k - 1 - target) as u32);
    let dim_pre = d.pow(target as u32);
    let full = dim_pre * d * dim_post;
    let mut out = CMat::zeros(full, full);
    let idx = |pre: usize, t: usize, post: usize| (pre * d + t) * dim_post + post;
    for rpre in 0..dim_pre {
        for rpost in 0..dim_post {
            for cpre in 0..dim_pre {
                for cpost in 0..dim_post {
                    out[(idx(rpre, 0, rpost), idx(cpre, 0, cpost))] =
                        rest[(rpre * dim_post + rpost, cpre * dim_post + cpost)];
                }
            }
        }
    }
    out
}

/// Apply a d^m x d^m operator to the given qudit targets of a d^k register:
/// rho -> (op) rho (op'). Targets are register indices, most significant
/// first; they need not be adjacent or ordered.
pub fn conjugate_at(rho: &CMat, op: &CMat, targets: &[usize], k: usize, d: usize) -> CMat {
    // A rho A' = (A (A rho)')'.
    let left = left_mult_at(rho, op, targets, k, d);
    let right = left_mult_at(&left.adjoint(), op, targets, k, d);
    right.adjoint()
}

/// Left-multiply rho (or a column block) by an operator embedded at
/// `targets`: (op ⊗ I) rho.
pub fn left_mult_at(rho: &CMat, op: &CMat, targets: &[usize], k: usize, d: usize) -> CMat {
    let dim = rho.nrows();
    let ncols = rho.ncols();
    let m = targets.len();
    let dm = d.pow(m as u32);
    assert_eq!(op.nrows(), dm, "operator size must match target count");
    // Strides for extracting/replacing the target sub-index of a row index.
    let strides: Vec<usize> = targets.iter().map(|&t| d.pow((k - 1 - t) as u32)).collect();
    let mut out = CMat::zeros(dim, ncols);
    // Enumerate rows by (base, target sub-index).
    for row in 0..dim {
        // Decompose row.
        let mut sub = 0usize;
        let mut base = row;
        for (s, &st) in strides.iter().enumerate() {
            let digit = (row / st) % d;
            sub = sub * d + digit;
            base -= digit * st;
            let _ = s;
        }
        for newsub in 0..dm {
            let a = op[(newsub, sub)];
            if a == Complex64::ZERO {
                continue;
            }
            // Compose the new row index.
            let mut newrow = base;
            let mut rem = newsub;
            for &st in strides.iter().rev() {
                newrow += (rem % d) * st;
                rem /= d;
            }
            for col in 0..ncols {
                let v = rho[(row, col)];
                if v != Complex64::ZERO {
                    out[(newrow, col)] += a * v;
                }
            }
        }
    }
    out
}

/// Serde representation of a complex matrix as rows of [re, im] pairs.
pub mod cmat_serde {
    use super::{c, CMat};
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("matrix must be square and nonempty"));
        }
        let mut m = CMat::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &[re, im]) in row.iter().enumerate() {
                m[(i, j)] = c(re, im);
            }
        }
        Ok(m)
    }
}
