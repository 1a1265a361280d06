//! Decomposition of a leading Kraus operator into its coherent (unitary
//! rotation) and incoherent (Hermitian contraction) parts.
//!
//! A near-identity A0 factors as A0 = U D with U unitary and D Hermitian
//! PSD. For qubits U = cos(theta) I + i sin(theta) v.sigma and
//! D = (1-p) I + Delta w.sigma; for qudits U = exp(i theta H) with H a
//! normalized traceless Hermitian combination of Heisenberg-Weyl operators.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::channel::{canonical_kraus, choi_from_kraus, KrausChannel};
use crate::error::{Error, Result};
use crate::linalg::{
    c, cr, hermitian_eigen, identity, is_finite, paulis, unitary_log_generator, CMat,
};
use crate::qudit::heisenberg_weyl;

/// Coherence parameters of a qubit leading Kraus operator.
#[derive(Debug, Clone)]
pub struct QubitCoherence {
    /// Rotation angle, >= 0.
    pub theta: f64,
    /// Rotation axis, unit 3-vector (convention (0,0,1) when theta = 0).
    pub axis: [f64; 3],
    /// Incoherent contraction strength: D = (1-p) I + Delta w.sigma.
    pub p: f64,
    pub delta: f64,
    /// Contraction axis (convention (0,0,1) when delta = 0).
    pub w: [f64; 3],
}

impl QubitCoherence {
    /// v component along a Pauli axis index (0 = X, 1 = Y, 2 = Z).
    pub fn v(&self, axis: usize) -> f64 {
        self.axis[axis]
    }

    /// Rebuild U(theta, v) * D(p, delta, w).
    pub fn rebuild(&self) -> CMat {
        let [i, x, y, z] = paulis();
        let vs = &x * cr(self.axis[0]) + &y * cr(self.axis[1]) + &z * cr(self.axis[2]);
        let u = &i * cr(self.theta.cos()) + vs * c(0.0, self.theta.sin());
        let ws = &x * cr(self.w[0]) + &y * cr(self.w[1]) + &z * cr(self.w[2]);
        let d = &i * cr(1.0 - self.p) + ws * cr(self.delta);
        u * d
    }
}

/// Coherence parameters of a qudit leading Kraus operator, indexed by
/// Heisenberg-Weyl labels (a, b) for X^a Z^b.
#[derive(Debug, Clone)]
pub struct QuditCoherence {
    pub d: usize,
    pub theta: f64,
    /// Normalized generator coefficients: sum |h_P|^2 = 1 (empty when
    /// theta = 0).
    pub h: BTreeMap<(usize, usize), Complex64>,
    pub p: f64,
    /// Pauli coefficients of the contraction D for P != I.
    pub d_coeffs: BTreeMap<(usize, usize), Complex64>,
}

impl QuditCoherence {
    /// Sensitivity weight v_P = sum_{s=1}^{d-1} |h_{P^s}|^2 for the pair
    /// labeled by P = X^a Z^b.
    pub fn v_weight(&self, a: usize, b: usize) -> f64 {
        let d = self.d;
        let mut v = 0.0;
        for s in 1..d {
            let label = ((a * s) % d, (b * s) % d);
            if label == (0, 0) {
                continue;
            }
            if let Some(h) = self.h.get(&label) {
                v += h.norm_sqr();
            }
        }
        v
    }

    /// Rebuild exp(i theta H) * D from the stored coefficients.
    pub fn rebuild(&self) -> CMat {
        let d = self.d;
        let mut k = CMat::zeros(d, d);
        for (&(a, b), &h) in &self.h {
            k += heisenberg_weyl(d, a, b) * (h * cr(self.theta));
        }
        // exp(iK) for Hermitian K.
        let (vals, vecs) = hermitian_eigen(&k);
        let mut e = CMat::zeros(d, d);
        for (i, &v) in vals.iter().enumerate() {
            e[(i, i)] = c(0.0, v).exp();
        }
        let u = &vecs * e * vecs.adjoint();
        let mut dd = identity(d) * cr(1.0 - self.p);
        for (&(a, b), &coef) in &self.d_coeffs {
            dd += heisenberg_weyl(d, a, b) * coef;
        }
        u * dd
    }
}

#[derive(Debug, Clone)]
pub enum CoherenceParams {
    Qubit(QubitCoherence),
    Qudit(QuditCoherence),
}

impl CoherenceParams {
    pub fn theta(&self) -> f64 {
        match self {
            CoherenceParams::Qubit(q) => q.theta,
            CoherenceParams::Qudit(q) => q.theta,
        }
    }

    pub fn p(&self) -> f64 {
        match self {
            CoherenceParams::Qubit(q) => q.p,
            CoherenceParams::Qudit(q) => q.p,
        }
    }

    pub fn as_qubit(&self) -> Option<&QubitCoherence> {
        match self {
            CoherenceParams::Qubit(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_qudit(&self) -> Option<&QuditCoherence> {
        match self {
            CoherenceParams::Qudit(q) => Some(q),
            _ => None,
        }
    }
}

/// Right polar decomposition A0 = U D with D = sqrt(A0' A0) and U unitary.
///
/// Fails when D is singular (the channel is too far from the identity for a
/// meaningful coherent part).
pub fn polar_decompose(a0: &CMat) -> Result<(CMat, CMat)> {
    let m = a0.adjoint() * a0;
    let (vals, vecs) = hermitian_eigen(&m);
    let min = vals.first().copied().unwrap_or(0.0);
    if min < 1e-12 {
        return Err(Error::TooFarFromIdentity(min.max(0.0).sqrt()));
    }
    let n = a0.nrows();
    let mut s = CMat::zeros(n, n);
    let mut sinv = CMat::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        s[(i, i)] = cr(v.sqrt());
        sinv[(i, i)] = cr(1.0 / v.sqrt());
    }
    let d = &vecs * &s * vecs.adjoint();
    let u = a0 * &vecs * &sinv * vecs.adjoint();
    Ok((u, d))
}

/// Fix the global phase of a unitary: det(U) = 1 with the branch chosen to
/// maximize Re tr(U) (nonnegative for near-identity input).
pub fn phase_fix_unitary(u: &CMat) -> CMat {
    let d = u.nrows();
    let det = u.determinant();
    let base = det.arg() / d as f64;
    let mut best: Option<(f64, CMat)> = None;
    for k in 0..d {
        let phase = c(0.0, -(base + 2.0 * std::f64::consts::PI * k as f64 / d as f64)).exp();
        let cand = u * phase;
        let re_tr = cand.trace().re;
        if best.as_ref().map_or(true, |(b, _)| re_tr > *b) {
            best = Some((re_tr, cand));
        }
    }
    best.unwrap().1
}

/// Decompose a leading Kraus operator into coherence parameters.
///
/// The qubit path returns (theta, v, p, Delta, w); the qudit path returns
/// (theta, {h_P}, p, {d_P}) over Heisenberg-Weyl labels. The rebuilt U D
/// matches A0 up to the fixed global phase.
pub fn coherence_params(a0: &CMat, d: usize) -> Result<CoherenceParams> {
    if a0.nrows() != d || a0.ncols() != d {
        return Err(Error::Dimension(format!(
            "A0 is {}x{}, expected {d}x{d}",
            a0.nrows(),
            a0.ncols()
        )));
    }
    if !is_finite(a0) {
        return Err(Error::Validation("A0 has non-finite entries".into()));
    }
    let (u_raw, dd) = polar_decompose(a0)?;
    let u = phase_fix_unitary(&u_raw);
    if d == 2 {
        let [_, x, y, z] = paulis();
        let cos_t = (u.trace().re / 2.0).clamp(-1.0, 1.0);
        let theta = cos_t.acos();
        let (theta, axis) = if theta < 1e-14 {
            (0.0, [0.0, 0.0, 1.0])
        } else {
            let sin_t = theta.sin();
            let mut v = [
                (&x * &u).trace().im / (2.0 * sin_t),
                (&y * &u).trace().im / (2.0 * sin_t),
                (&z * &u).trace().im / (2.0 * sin_t),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v = [v[0] / norm, v[1] / norm, v[2] / norm];
            (theta, v)
        };
        let p = 1.0 - dd.trace().re / 2.0;
        let p = if p.abs() < 1e-12 { 0.0 } else { p };
        let mut dw = [
            (&x * &dd).trace().re / 2.0,
            (&y * &dd).trace().re / 2.0,
            (&z * &dd).trace().re / 2.0,
        ];
        let delta = (dw[0] * dw[0] + dw[1] * dw[1] + dw[2] * dw[2]).sqrt();
        let w = if delta < 1e-14 {
            [0.0, 0.0, 1.0]
        } else {
            dw = [dw[0] / delta, dw[1] / delta, dw[2] / delta];
            dw
        };
        let delta = if delta < 1e-14 { 0.0 } else { delta };
        Ok(CoherenceParams::Qubit(QubitCoherence { theta, axis, p, delta, w }))
    } else {
        let h_full = unitary_log_generator(&u)?;
        let shift = h_full.trace() / cr(d as f64);
        let h_traceless = &h_full - identity(d) * shift;
        let mut hp = BTreeMap::new();
        let mut norm2 = 0.0;
        for a in 0..d {
            for b in 0..d {
                if (a, b) == (0, 0) {
                    continue;
                }
                let w = heisenberg_weyl(d, a, b);
                let coef = (w.adjoint() * &h_traceless).trace() / cr(d as f64);
                norm2 += coef.norm_sqr();
                hp.insert((a, b), coef);
            }
        }
        let theta = norm2.sqrt();
        let (theta, h) = if theta < 1e-14 {
            (0.0, BTreeMap::new())
        } else {
            let h = hp.into_iter().map(|(k, v)| (k, v / cr(theta))).collect();
            (theta, h)
        };
        let p = 1.0 - dd.trace().re / d as f64;
        let p = if p.abs() < 1e-12 { 0.0 } else { p };
        let mut d_coeffs = BTreeMap::new();
        for a in 0..d {
            for b in 0..d {
                if (a, b) == (0, 0) {
                    continue;
                }
                let w = heisenberg_weyl(d, a, b);
                let coef = (w.adjoint() * &dd).trace() / cr(d as f64);
                d_coeffs.insert((a, b), coef);
            }
        }
        Ok(CoherenceParams::Qudit(QuditCoherence { d, theta, h, p, d_coeffs }))
    }
}

/// Leading (dominant) Kraus operator of a near-identity channel, phase-fixed
/// so its unitary polar factor has det 1 and nonnegative real trace.
pub fn leading_kraus(ch: &KrausChannel) -> Result<CMat> {
    let choi = choi_from_kraus(ch)?;
    let (vals, _) = hermitian_eigen(choi.matrix());
    let max = vals.last().copied().unwrap_or(0.0);
    if max < 0.5 {
        return Err(Error::NoDominantKraus(max));
    }
    let canon = canonical_kraus(&choi)?;
    let a0 = canon.kraus()[0].clone();
    // Transfer the polar factor's phase fix onto A0 itself.
    let (u_raw, _) = polar_decompose(&a0)?;
    let u_fixed = phase_fix_unitary(&u_raw);
    let phase = (u_raw.adjoint() * &u_fixed).trace();
    let phase = phase / cr(phase.norm());
    Ok(a0 * phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_dist, rotation_unitary};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn pure_rotation() {
        let a0 = rotation_unitary(0.1, [0.0, 0.0, 1.0]);
        let params = coherence_params(&a0, 2).unwrap();
        let q = params.as_qubit().unwrap();
        assert_close(q.theta, 0.1, 1e-12);
        assert_close(q.axis[2], 1.0, 1e-12);
        assert_close(q.p, 0.0, 1e-12);
        assert_close(q.delta, 0.0, 1e-12);
    }

    #[test]
    fn scalar_contraction() {
        let q_damp = 0.12f64;
        let a0 = identity(2) * cr((1.0 - q_damp).sqrt());
        let params = coherence_params(&a0, 2).unwrap();
        let q = params.as_qubit().unwrap();
        assert_close(q.theta, 0.0, 1e-12);
        assert_close(q.p, 1.0 - 0.88f64.sqrt(), 1e-12);
        assert_close(q.delta, 0.0, 1e-12);
        assert_eq!(q.axis, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn rotation_times_contraction_roundtrip() {
        let u = rotation_unitary(0.05, [0.6, 0.0, 0.8]);
        let mut dmat = CMat::zeros(2, 2);
        dmat[(0, 0)] = cr(0.99f64.sqrt());
        dmat[(1, 1)] = cr(0.98f64.sqrt());
        let a0 = &u * &dmat;
        let params = coherence_params(&a0, 2).unwrap();
        let q = params.as_qubit().unwrap();
        assert_close(q.theta, 0.05, 1e-6);
        assert_close(q.axis[0], 0.6, 1e-6);
        assert_close(q.axis[1], 0.0, 1e-6);
        assert_close(q.axis[2], 0.8, 1e-6);
        // Round-trip within 1e-8 after the global phase was fixed.
        let rebuilt = q.rebuild();
        let phase = (a0.adjoint() * &rebuilt).trace();
        let phase = phase / cr(phase.norm());
        assert!(frobenius_dist(&(a0 * phase), &rebuilt) < 1e-8);
    }

    #[test]
    fn axis_sign_absorbed_into_theta_positive() {
        // A rotation by a negative angle must come back with theta >= 0 and
        // the axis flipped.
        let a0 = rotation_unitary(-0.07, [0.0, 1.0, 0.0]);
        let q = coherence_params(&a0, 2).unwrap();
        let q = q.as_qubit().unwrap();
        assert_close(q.theta, 0.07, 1e-12);
        assert_close(q.axis[1], -1.0, 1e-12);
    }

    #[test]
    fn singular_contraction_rejected() {
        let mut a0 = CMat::zeros(2, 2);
        a0[(0, 0)] = cr(1.0);
        let err = coherence_params(&a0, 2).unwrap_err();
        assert!(err.to_string().contains("too far from identity"));
    }

    #[test]
    fn leading_kraus_identity_and_rotation() {
        let id = KrausChannel::identity_channel(2);
        let a0 = leading_kraus(&id).unwrap();
        assert!(frobenius_dist(&a0, &identity(2)) < 1e-9);

        let u = rotation_unitary(0.2, [0.0, 1.0, 0.0]);
        let ch = KrausChannel::unitary(&u).unwrap();
        let a0 = leading_kraus(&ch).unwrap();
        let phase = (u.adjoint() * &a0).trace();
        let phase = phase / cr(phase.norm());
        assert!(frobenius_dist(&(&a0 * phase.conj()), &u) < 1e-9);
    }

    #[test]
    fn leading_kraus_mixed_channel() {
        // 0.9 rotation + 0.1 depolarizing: theta near 0.9-weighted rotation
        // angle. The brute-force Choi diagonalization defines the truth; we
        // check the recovered angle lands in the expected range.
        let mix = KrausChannel::convex_mix(
            &[
                KrausChannel::rotation(0.1, [0.0, 0.0, 1.0]).unwrap(),
                KrausChannel::depolarizing(0.5).unwrap(),
            ],
            &[0.9, 0.1],
        )
        .unwrap();
        let a0 = leading_kraus(&mix).unwrap();
        let params = coherence_params(&a0, 2).unwrap();
        let q = params.as_qubit().unwrap();
        assert!(q.theta > 0.07 && q.theta < 0.11, "theta = {}", q.theta);
        assert_close(q.axis[2].abs(), 1.0, 1e-9);
    }

    #[test]
    fn no_dominant_kraus() {
        let ch = KrausChannel::depolarizing(0.9).unwrap();
        assert!(matches!(leading_kraus(&ch), Err(Error::NoDominantKraus(_))));
    }

    #[test]
    fn rotation_channel_angle_axis_recovery() {
        // leading_kraus followed by coherence_params recovers (theta, v)
        // within 1e-6 for rotation channels.
        for (theta, axis) in [
            (0.02, [0.6, 0.0, 0.8]),
            (0.1, [0.0, 1.0, 0.0]),
            (0.3, [1.0 / 3.0f64.sqrt(), 1.0 / 3.0f64.sqrt(), 1.0 / 3.0f64.sqrt()]),
        ] {
            let ch = KrausChannel::rotation(theta, axis).unwrap();
            let a0 = leading_kraus(&ch).unwrap();
            let q = coherence_params(&a0, 2).unwrap();
            let q = q.as_qubit().unwrap();
            assert_close(q.theta, theta, 1e-6);
            for k in 0..3 {
                assert_close(q.axis[k], axis[k], 1e-6);
            }
        }
    }

    #[test]
    fn qudit_decomposition_d3() {
        // U = exp(i theta (Z + Z^2)/sqrt(2)) on a qutrit, mild contraction.
        let d = 3;
        let z1 = heisenberg_weyl(d, 0, 1);
        let z2 = heisenberg_weyl(d, 0, 2);
        let h = (&z1 + &z2) / cr(2.0f64.sqrt());
        let theta = 0.04;
        let (vals, vecs) = hermitian_eigen(&h);
        let mut e = CMat::zeros(d, d);
        for (i, &v) in vals.iter().enumerate() {
            e[(i, i)] = c(0.0, theta * v).exp();
        }
        let u = &vecs * e * vecs.adjoint();
        let mut dmat = identity(d);
        dmat[(1, 1)] = cr(0.995);
        dmat[(2, 2)] = cr(0.99);
        let a0 = &u * dmat;
        let params = coherence_params(&a0, d).unwrap();
        let q = params.as_qudit().unwrap();
        assert_close(q.theta, theta, 1e-8);
        // h concentrated on Z and Z^2 with equal magnitude.
        assert_close(q.h[&(0, 1)].norm(), 1.0 / 2.0f64.sqrt(), 1e-8);
        assert_close(q.h[&(0, 2)].norm(), 1.0 / 2.0f64.sqrt(), 1e-8);
        assert_close(q.v_weight(0, 1), 1.0, 1e-10);
        assert_close(q.v_weight(1, 0), 0.0, 1e-10);
        // Normalization and round-trip.
        let norm2: f64 = q.h.values().map(|h| h.norm_sqr()).sum();
        assert_close(norm2, 1.0, 1e-9);
        let rebuilt = q.rebuild();
        let phase = (a0.adjoint() * &rebuilt).trace();
        let phase = phase / cr(phase.norm());
        assert!(frobenius_dist(&(a0 * phase), &rebuilt) < 1e-8);
    }
}
