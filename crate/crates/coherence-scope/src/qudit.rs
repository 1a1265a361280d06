//! Prime-dimension generalization of the GHZ protocol: Heisenberg-Weyl
//! operators, the GHZ-like stabilizer states psi_{n,P,Q}, the modular-sum
//! parity projector, and leading-order infidelity formulas.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::KrausChannel;
use crate::coherence::QuditCoherence;
use crate::error::{Error, Result};
use crate::linalg::{c, cr, unitary_eigen, CMat, CVec};
use crate::rng;

/// X^a Z^b on a d-dimensional qudit with X|j> = |j+1 mod d> and
/// Z|j> = omega^j |j>, omega = exp(2 pi i / d).
pub fn heisenberg_weyl(d: usize, a: usize, b: usize) -> CMat {
    assert!(d >= 2 && a < d && b < d, "heisenberg_weyl label out of range");
    let mut m = CMat::zeros(d, d);
    let omega = 2.0 * std::f64::consts::PI / d as f64;
    for j in 0..d {
        // Column j: Z contributes omega^(b j), X shifts j -> j + a.
        let phase = c(0.0, omega * (b * j) as f64).exp();
        m[((j + a) % d, j)] = phase;
    }
    m
}

pub fn is_prime(d: usize) -> bool {
    if d < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= d {
        if d % k == 0 {
            return false;
        }
        k += 1;
    }
    true
}

/// Label (a, b) of a Heisenberg-Weyl operator X^a Z^b on a prime-d qudit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HWLabel {
    pub d: usize,
    pub a: usize,
    pub b: usize,
}

impl HWLabel {
    pub fn new(d: usize, a: usize, b: usize) -> Result<Self> {
        if !is_prime(d) {
            return Err(Error::Validation(format!("qudit dimension {d} must be prime")));
        }
        if a >= d || b >= d {
            return Err(Error::Validation(format!("label ({a},{b}) out of range for d={d}")));
        }
        Ok(HWLabel { d, a, b })
    }

    pub fn is_identity(&self) -> bool {
        self.a == 0 && self.b == 0
    }

    pub fn matrix(&self) -> CMat {
        heisenberg_weyl(self.d, self.a, self.b)
    }
}

/// A generating pair (P, Q) of non-commuting Heisenberg-Weyl operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuditPair {
    pub p: HWLabel,
    pub q: HWLabel,
}

impl QuditPair {
    pub fn new(p: HWLabel, q: HWLabel) -> Result<Self> {
        if p.d != q.d {
            return Err(Error::Dimension("pair labels must share a dimension".into()));
        }
        // Symplectic non-degeneracy: a_P b_Q - a_Q b_P != 0 mod d.
        let d = p.d as i64;
        let sym = (p.a as i64 * q.b as i64 - q.a as i64 * p.b as i64).rem_euclid(d);
        if sym == 0 {
            return Err(Error::Validation(format!(
                "labels ({},{}) and ({},{}) do not generate the Heisenberg-Weyl group",
                p.a, p.b, q.a, q.b
            )));
        }
        Ok(QuditPair { p, q })
    }

    pub fn d(&self) -> usize {
        self.p.d
    }
}

/// The prime-d maximally sensitive set: P in {X, Z, XZ, X^2 Z, ..,
/// X^(d-1) Z}, each paired with a canonical generating partner
/// (Q = Z for P = X, Q = X otherwise). Returns d+1 pairs.
pub fn sensitive_pair_set(d: usize) -> Result<Vec<QuditPair>> {
    if !is_prime(d) {
        return Err(Error::Validation(format!("sensitive set requires prime d, got {d}")));
    }
    let mut out = Vec::with_capacity(d + 1);
    out.push(QuditPair::new(HWLabel::new(d, 1, 0)?, HWLabel::new(d, 0, 1)?)?);
    out.push(QuditPair::new(HWLabel::new(d, 0, 1)?, HWLabel::new(d, 1, 0)?)?);
    for a in 1..d {
        out.push(QuditPair::new(HWLabel::new(d, a, 1)?, HWLabel::new(d, 1, 0)?)?);
    }
    Ok(out)
}

/// The state psi_{n,P,Q} in compact form: the d single-qudit vectors
/// u_s = Q^s |e_0> whose equal superposition of n-fold tensor powers is the
/// state, where |e_0> is the P eigenvector of smallest eigenphase.
#[derive(Debug, Clone)]
pub struct SensitiveState {
    pub pair: QuditPair,
    pub components: Vec<CVec>,
}

/// Construct psi_{n,P,Q} component vectors and verify the stabilizer
/// conditions (each u_s is a unit-modulus P eigenvector, the eigenvalues are
/// distinct, and Q cycles the family).
pub fn sensitive_state(pair: &QuditPair) -> Result<SensitiveState> {
    let d = pair.d();
    let p = pair.p.matrix();
    let q = pair.q.matrix();
    let (phases, vecs) = unitary_eigen(&p)?;
    // Order eigenphases into [0, 2pi) with a small wrap guard so an
    // eigenvalue of exactly 1 sorts first.
    let mut order: Vec<usize> = (0..d).collect();
    let wrapped = |i: usize| {
        let ph = phases[i];
        if ph < -1e-9 {
            ph + 2.0 * std::f64::consts::PI
        } else {
            ph
        }
    };
    order.sort_by(|&a, &b| wrapped(a).partial_cmp(&wrapped(b)).unwrap());
    let e0: CVec = vecs.column(order[0]).into();
    let mut components = Vec::with_capacity(d);
    let mut u = e0;
    for _ in 0..d {
        components.push(u.clone());
        u = &q * u;
    }
    // Q^d must return to the start (Q in the canonical set has Q^d = I).
    if (&u - &components[0]).norm() > 1e-9 {
        return Err(Error::Consistency(
            "Q^d does not close the component cycle (phase convention bug)".into(),
        ));
    }
    // Each component must be a unit-modulus eigenvector of P, all
    // eigenvalues distinct.
    let mut eigs: Vec<Complex64> = Vec::with_capacity(d);
    for comp in &components {
        let image = &p * comp;
        let lambda = comp.dotc(&image);
        if (&image - comp * lambda).norm() > 1e-9 || (lambda.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Consistency(
                "state component is not a unit-modulus P eigenvector".into(),
            ));
        }
        eigs.push(lambda);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if (eigs[i] - eigs[j]).norm() < 1e-6 {
                return Err(Error::Consistency(
                    "degenerate P eigenvalues in state construction".into(),
                ));
            }
        }
    }
    Ok(SensitiveState { pair: *pair, components })
}

fn check_qudit_channels(channels: &[&KrausChannel], d: usize) -> Result<()> {
    if channels.len() < 2 {
        return Err(Error::Validation("qudit protocol needs n >= 2".into()));
    }
    for ch in channels {
        if ch.dim() != d {
            return Err(Error::Dimension(format!(
                "channel dim {} does not match qudit dim {d}",
                ch.dim()
            )));
        }
    }
    Ok(())
}

/// Acceptance probability tr(Pi_Q (x)_j C_j(|psi><psi|)) with
/// Pi_Q = (1/d) sum_s (Q^s)^(x)n, computed by the d^2*d-term transfer
/// product in O(n d^3) channel applications.
pub fn qudit_accept_probability(channels: &[&KrausChannel], pair: &QuditPair) -> Result<f64> {
    let d = pair.d();
    check_qudit_channels(channels, d)?;
    let state = sensitive_state(pair)?;
    let q = pair.q.matrix();
    // Powers of Q.
    let mut q_pows = Vec::with_capacity(d);
    let mut acc = CMat::identity(d, d);
    for _ in 0..d {
        q_pows.push(acc.clone());
        acc = &q * acc;
    }
    let mut total = Complex64::ZERO;
    for m in 0..d {
        for s in 0..d {
            for t in 0..d {
                let ket_bra = &state.components[s] * state.components[t].adjoint();
                let mut prod = cr(1.0);
                for ch in channels {
                    let sigma = ch.apply(&ket_bra);
                    prod *= (&q_pows[m] * sigma).trace();
                    if prod.norm() < 1e-300 {
                        break;
                    }
                }
                total += prod;
            }
        }
    }
    let p = total / cr((d * d) as f64);
    if p.im.abs() > 1e-9 {
        return Err(Error::Consistency(format!(
            "qudit acceptance has imaginary part {:.3e}",
            p.im
        )));
    }
    if p.re < -1e-9 || p.re > 1.0 + 1e-9 {
        return Err(Error::Consistency(format!("probability {} outside [0, 1]", p.re)));
    }
    Ok(p.re.clamp(0.0, 1.0))
}

/// Brute-force oracle with the full d^n density matrix (cap d^n <= 1024).
pub fn qudit_accept_bruteforce(channels: &[&KrausChannel], pair: &QuditPair) -> Result<f64> {
    let d = pair.d();
    check_qudit_channels(channels, d)?;
    let n = channels.len();
    let dim = d.checked_pow(n as u32).filter(|&x| x <= 1024).ok_or(Error::SizeCap {
        size: d.pow(n as u32),
        cap: 1024,
    })?;
    let state = sensitive_state(pair)?;
    // psi = (1/sqrt d) sum_s u_s^(x)n.
    let mut psi = CVec::zeros(dim);
    for i in 0..dim {
        let mut digits = Vec::with_capacity(n);
        let mut rem = i;
        for _ in 0..n {
            digits.push(rem % d);
            rem /= d;
        }
        digits.reverse();
        let mut amp = Complex64::ZERO;
        for s in 0..d {
            let mut term = cr(1.0);
            for &dig in &digits {
                term *= state.components[s][dig];
            }
            amp += term;
        }
        psi[i] = amp / cr((d as f64).sqrt());
    }
    let mut rho = &psi * psi.adjoint();
    for (j, ch) in channels.iter().enumerate() {
        rho = ch.apply_at(&rho, j, n)?;
    }
    // tr(Pi_Q rho') = (1/d) sum_m prod-structure trace of (Q^m)^(x)n.
    let q = pair.q.matrix();
    let mut q_pows = Vec::with_capacity(d);
    let mut acc = CMat::identity(d, d);
    for _ in 0..d {
        q_pows.push(acc.clone());
        acc = &q * acc;
    }
    let mut total = Complex64::ZERO;
    for m in 0..d {
        let qm = &q_pows[m];
        for i in 0..dim {
            for jdx in 0..dim {
                let mut elem = cr(1.0);
                let (mut ii, mut jj) = (i, jdx);
                let mut digits = Vec::with_capacity(n);
                for _ in 0..n {
                    digits.push((ii % d, jj % d));
                    ii /= d;
                    jj /= d;
                }
                for &(di, dj) in &digits {
                    elem *= qm[(di, dj)];
                    if elem == Complex64::ZERO {
                        break;
                    }
                }
                if elem != Complex64::ZERO {
                    total += elem * rho[(jdx, i)];
                }
            }
        }
    }
    let p = total / cr(d as f64);
    if p.im.abs() > 1e-9 {
        return Err(Error::Consistency(format!(
            "qudit brute-force acceptance has imaginary part {:.3e}",
            p.im
        )));
    }
    Ok(p.re.clamp(0.0, 1.0))
}

/// Leading-order infidelity 2np + n theta^2 + 2 C(n,2) theta^2 v_P with
/// v_P = sum_{s=1}^{d-1} |h_{P^s}|^2.
pub fn predicted_qudit_infidelity(params: &QuditCoherence, pair: &QuditPair, n: usize) -> f64 {
    let nf = n as f64;
    let vp = params.v_weight(pair.p.a, pair.p.b);
    let t2 = params.theta * params.theta;
    2.0 * nf * params.p + nf * t2 + nf * (nf - 1.0) * t2 * vp
}

/// One qudit protocol result row: same schema as the qubit rows with the
/// pair labels in place of the basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuditResultRow {
    pub d: usize,
    pub p_a: usize,
    pub p_b: usize,
    pub q_a: usize,
    pub q_b: usize,
    pub n: usize,
    pub shots: u64,
    pub error_count: Option<u64>,
    pub p_error: f64,
    pub stderr: f64,
}

impl QuditResultRow {
    pub fn csv_header() -> &'static str {
        "d,P_a,P_b,Q_a,Q_b,n,shots,error_count,p_error,stderr"
    }

    pub fn to_csv(&self) -> String {
        let count = self.error_count.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.d,
            self.p_a,
            self.p_b,
            self.q_a,
            self.q_b,
            self.n,
            self.shots,
            count,
            self.p_error,
            self.stderr
        )
    }
}

/// Run the qudit channel protocol over the full sensitive pair set.
pub fn run_qudit_protocol(
    d: usize,
    channel: &KrausChannel,
    n_values: &[usize],
    shots: u64,
    seed: u64,
) -> Result<Vec<QuditResultRow>> {
    if channel.dim() != d {
        return Err(Error::Dimension(format!(
            "channel dim {} does not match qudit dim {d}",
            channel.dim()
        )));
    }
    let pairs = sensitive_pair_set(d)?;
    let mut rows = Vec::new();
    for pair in &pairs {
        let tag = format!("{},{}|{},{}", pair.p.a, pair.p.b, pair.q.a, pair.q.b);
        for &n in n_values {
            let channels = vec![channel; n];
            let accept = qudit_accept_probability(&channels, pair)?;
            let p_exact = (1.0 - accept).clamp(0.0, 1.0);
            let row = if shots > 0 {
                let mut stream = rng::derive_stream(seed, &["qudit-protocol", &tag], &[n as u64]);
                let count = rng::binomial(&mut stream, shots, p_exact);
                QuditResultRow {
                    d,
                    p_a: pair.p.a,
                    p_b: pair.p.b,
                    q_a: pair.q.a,
                    q_b: pair.q.b,
                    n,
                    shots,
                    error_count: Some(count),
                    p_error: count as f64 / shots as f64,
                    stderr: crate::ghz::binomial_stderr(count, shots),
                }
            } else {
                QuditResultRow {
                    d,
                    p_a: pair.p.a,
                    p_b: pair.p.b,
                    q_a: pair.q.a,
                    q_b: pair.q.b,
                    n,
                    shots: 0,
                    error_count: None,
                    p_error: p_exact,
                    stderr: 0.0,
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
