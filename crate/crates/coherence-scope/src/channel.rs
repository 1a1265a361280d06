//! Channel representations and algebra: Kraus form, Choi matrices, canonical
//! Kraus extraction, Pauli twirls, composition, and standard noise builders.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, c, cr, frobenius_dist, hermitian_eigen, identity, is_finite, pauli_basis, paulis,
    rotation_unitary, CMat, TOL_STRUCT,
};

/// A completely positive trace-preserving map as a list of same-dimension
/// Kraus operators.
///
/// Serializes as `{"dim": d, "kraus": [[[re, im], ...], ...]}` with each
/// operator a flat row-major list of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "KrausChannelRepr", into = "KrausChannelRepr")]
pub struct KrausChannel {
    dim: usize,
    kraus: Vec<CMat>,
}

#[derive(Serialize, Deserialize)]
struct KrausChannelRepr {
    dim: usize,
    kraus: Vec<Vec<[f64; 2]>>,
}

impl From<KrausChannel> for KrausChannelRepr {
    fn from(ch: KrausChannel) -> Self {
        let d = ch.dim;
        let kraus = ch
            .kraus
            .iter()
            .map(|a| {
                let mut flat = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        flat.push([a[(i, j)].re, a[(i, j)].im]);
                    }
                }
                flat
            })
            .collect();
        KrausChannelRepr { dim: d, kraus }
    }
}

impl TryFrom<KrausChannelRepr> for KrausChannel {
    type Error = Error;
    fn try_from(r: KrausChannelRepr) -> Result<Self> {
        let d = r.dim;
        let mut ops = Vec::with_capacity(r.kraus.len());
        for flat in &r.kraus {
            if flat.len() != d * d {
                return Err(Error::Validation(format!(
                    "kraus operator has {} entries, expected {}",
                    flat.len(),
                    d * d
                )));
            }
            let mut m = CMat::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    let [re, im] = flat[i * d + j];
                    m[(i, j)] = c(re, im);
                }
            }
            ops.push(m);
        }
        KrausChannel::new(d, ops)
    }
}

impl KrausChannel {
    /// Validate and construct. Requires every operator d x d with finite
    /// entries and sum_k A_k' A_k = I within 1e-10.
    pub fn new(dim: usize, kraus: Vec<CMat>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be >= 1".into()));
        }
        if kraus.is_empty() {
            return Err(Error::Validation("kraus list must be nonempty".into()));
        }
        for a in &kraus {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "kraus operator is {}x{}, channel dim {}",
                    a.nrows(),
                    a.ncols(),
                    dim
                )));
            }
            if !is_finite(a) {
                return Err(Error::Validation("kraus operator has non-finite entries".into()));
            }
        }
        let ch = KrausChannel { dim, kraus };
        let tp = ch.trace_preservation_error();
        if tp > TOL_STRUCT {
            return Err(Error::Validation(format!(
                "kraus trace-preservation: ||sum_k A_k' A_k - I|| = {tp:.3e} exceeds 1e-10"
            )));
        }
        Ok(ch)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[CMat] {
        &self.kraus
    }

    pub fn trace_preservation_error(&self) -> f64 {
        let mut sum = CMat::zeros(self.dim, self.dim);
        for a in &self.kraus {
            sum += a.adjoint() * a;
        }
        frobenius_dist(&sum, &identity(self.dim))
    }

    pub fn identity_channel(dim: usize) -> Self {
        KrausChannel { dim, kraus: vec![identity(dim)] }
    }

    /// Channel acting as a single unitary.
    pub fn unitary(u: &CMat) -> Result<Self> {
        let err = linalg::unitarity_error(u);
        if err > TOL_STRUCT {
            return Err(Error::Validation(format!(
                "matrix is not unitary (deviation {err:.3e})"
            )));
        }
        KrausChannel::new(u.nrows(), vec![u.clone()])
    }

    /// exp(i theta v.sigma) rotation channel; v is normalized internally.
    pub fn rotation(theta: f64, axis: [f64; 3]) -> Result<Self> {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(norm > 0.0) || !theta.is_finite() {
            return Err(Error::Validation("rotation axis must be nonzero and finite".into()));
        }
        let v = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
        KrausChannel::new(2, vec![rotation_unitary(theta, v)])
    }

    /// {sqrt(1-q) I, sqrt(q) Z}.
    pub fn dephasing(q: f64) -> Result<Self> {
        let [i, _, _, z] = paulis();
        check_prob(q, "dephasing q")?;
        KrausChannel::new(2, vec![i * cr((1.0 - q).sqrt()), z * cr(q.sqrt())])
    }

    /// {sqrt(1-q) I, sqrt(q/3) X, sqrt(q/3) Y, sqrt(q/3) Z}.
    pub fn depolarizing(q: f64) -> Result<Self> {
        check_prob(q, "depolarizing q")?;
        let [i, x, y, z] = paulis();
        let w = cr((q / 3.0).sqrt());
        KrausChannel::new(2, vec![i * cr((1.0 - q).sqrt()), x * w, y * w, z * w])
    }

    /// {sqrt(1-q) I, sqrt(q) X}.
    pub fn bit_flip(q: f64) -> Result<Self> {
        check_prob(q, "bit_flip q")?;
        let [i, x, _, _] = paulis();
        KrausChannel::new(2, vec![i * cr((1.0 - q).sqrt()), x * cr(q.sqrt())])
    }

    /// Amplitude damping with decay probability gamma.
    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        check_prob(gamma, "amplitude_damping gamma")?;
        let a0 = CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr((1.0 - gamma).sqrt())]);
        let a1 = CMat::from_row_slice(2, 2, &[cr(0.0), cr(gamma.sqrt()), cr(0.0), cr(0.0)]);
        KrausChannel::new(2, vec![a0, a1])
    }

    /// Sequential composition: parts[0] is applied first.
    pub fn composite(parts: &[KrausChannel]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("composite needs at least one part".into()))?;
        let d = first.dim;
        let mut acc = first.kraus.clone();
        for p in &parts[1..] {
            if p.dim != d {
                return Err(Error::Dimension("composite parts must share a dimension".into()));
            }
            let mut next = Vec::with_capacity(acc.len() * p.kraus.len());
            for b in &p.kraus {
                for a in &acc {
                    next.push(b * a);
                }
            }
            acc = next;
        }
        KrausChannel::new(d, acc)
    }

    /// Convex mixture with the given weights (must sum to 1).
    pub fn convex_mix(parts: &[KrausChannel], weights: &[f64]) -> Result<Self> {
        if parts.is_empty() || parts.len() != weights.len() {
            return Err(Error::Validation("convex_mix needs matching parts and weights".into()));
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Validation(format!(
                "convex_mix weights must be nonnegative and sum to 1 (sum = {wsum})"
            )));
        }
        let d = parts[0].dim;
        let mut kraus = Vec::new();
        for (p, &w) in parts.iter().zip(weights) {
            if p.dim != d {
                return Err(Error::Dimension("convex_mix parts must share a dimension".into()));
            }
            for a in &p.kraus {
                kraus.push(a * cr(w.sqrt()));
            }
        }
        KrausChannel::new(d, kraus)
    }

    /// Apply the channel to a density matrix of the channel's own dimension.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for a in &self.kraus {
            out += a * rho * a.adjoint();
        }
        out
    }

    /// Apply to one qudit of a d^k-dimensional register.
    pub fn apply_at(&self, rho: &CMat, target: usize, k: usize) -> Result<CMat> {
        let full = self.dim.pow(k as u32);
        if rho.nrows() != full || rho.ncols() != full || target >= k {
            return Err(Error::Dimension(format!(
                "register is {}x{}, expected {} qudits of dim {} (target {})",
                rho.nrows(),
                rho.ncols(),
                k,
                self.dim,
                target
            )));
        }
        let mut out = CMat::zeros(full, full);
        for a in &self.kraus {
            out += linalg::conjugate_at(rho, a, &[target], k, self.dim);
        }
        Ok(out)
    }

    /// Apply the channel as a linear map on a general operator (not
    /// necessarily a state); same arithmetic as `apply`.
    pub fn apply_op(&self, op: &CMat) -> CMat {
        self.apply(op)
    }

    /// Apply to a subset of qudits of a d^k register. The channel dimension
    /// must equal d^(number of targets).
    pub fn apply_multi(&self, rho: &CMat, targets: &[usize], k: usize, d: usize) -> Result<CMat> {
        let expected = d.pow(targets.len() as u32);
        if self.dim != expected {
            return Err(Error::Dimension(format!(
                "channel dim {} does not cover {} qudits of dim {d}",
                self.dim,
                targets.len()
            )));
        }
        let full = d.pow(k as u32);
        if rho.nrows() != full || targets.iter().any(|&t| t >= k) {
            return Err(Error::Dimension("register/target mismatch".into()));
        }
        let mut out = CMat::zeros(full, full);
        for a in &self.kraus {
            out += linalg::conjugate_at(rho, a, targets, k, d);
        }
        Ok(out)
    }
}

fn check_prob(q: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Validation(format!("{name} must be in [0, 1], got {q}")));
    }
    Ok(())
}

/// Named channel builders for config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Identity { dim: usize },
    Rotation { theta: f64, axis: [f64; 3] },
    Dephasing { q: f64 },
    Depolarizing { q: f64 },
    AmplitudeDamping { gamma: f64 },
    BitFlip { q: f64 },
    Composite { parts: Vec<ChannelSpec> },
    ConvexMix { parts: Vec<ChannelSpec>, weights: Vec<f64> },
    Kraus { channel: KrausChannel },
}

impl ChannelSpec {
    pub fn build(&self) -> Result<KrausChannel> {
        match self {
            ChannelSpec::Identity { dim } => Ok(KrausChannel::identity_channel(*dim)),
            ChannelSpec::Rotation { theta, axis } => KrausChannel::rotation(*theta, *axis),
            ChannelSpec::Dephasing { q } => KrausChannel::dephasing(*q),
            ChannelSpec::Depolarizing { q } => KrausChannel::depolarizing(*q),
            ChannelSpec::AmplitudeDamping { gamma } => KrausChannel::amplitude_damping(*gamma),
            ChannelSpec::BitFlip { q } => KrausChannel::bit_flip(*q),
            ChannelSpec::Composite { parts } => {
                let built: Result<Vec<_>> = parts.iter().map(|p| p.build()).collect();
                KrausChannel::composite(&built?)
            }
            ChannelSpec::ConvexMix { parts, weights } => {
                let built: Result<Vec<_>> = parts.iter().map(|p| p.build()).collect();
                KrausChannel::convex_mix(&built?, weights)
            }
            ChannelSpec::Kraus { channel } => Ok(channel.clone()),
        }
    }
}

/// The Choi state (I ⊗ C)(|phi+><phi+|): d^2 x d^2, Hermitian, PSD, trace 1.
///
/// Index convention: row index = a*d + b with `a` the reference-system label
/// (channel input basis) and `b` the output label, so
/// `Phi[(a,b),(a',b')] = <b| C(|a><a'|) |b'> / d`.
#[derive(Debug, Clone)]
pub struct ChoiMatrix {
    dim: usize,
    matrix: CMat,
}

impl ChoiMatrix {
    pub fn new(dim: usize, matrix: CMat) -> Result<Self> {
        let d2 = dim * dim;
        if matrix.nrows() != d2 || matrix.ncols() != d2 {
            return Err(Error::Dimension(format!(
                "Choi matrix is {}x{}, expected {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                d2,
                d2
            )));
        }
        let herm = linalg::hermiticity_error(&matrix);
        if herm > TOL_STRUCT {
            return Err(Error::Validation(format!(
                "Choi matrix not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TOL_STRUCT || tr.im.abs() > TOL_STRUCT {
            return Err(Error::Validation(format!("Choi trace = {tr}, expected 1")));
        }
        let (vals, _) = hermitian_eigen(&matrix);
        if let Some(&min) = vals.first() {
            if min < -TOL_STRUCT {
                return Err(Error::NotCompletelyPositive(min));
            }
        }
        Ok(ChoiMatrix { dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn distance(&self, other: &ChoiMatrix) -> f64 {
        frobenius_dist(&self.matrix, &other.matrix)
    }
}

/// Choi state of a channel: (I ⊗ C)(|phi+><phi+|).
pub fn choi_from_kraus(ch: &KrausChannel) -> Result<ChoiMatrix> {
    let d = ch.dim();
    let d2 = d * d;
    let mut m = CMat::zeros(d2, d2);
    for k in ch.kraus() {
        for a in 0..d {
            for b in 0..d {
                for ap in 0..d {
                    for bp in 0..d {
                        m[(a * d + b, ap * d + bp)] +=
                            k[(b, a)] * k[(bp, ap)].conj() / cr(d as f64);
                    }
                }
            }
        }
    }
    ChoiMatrix::new(d, m)
}

/// Canonical Kraus operators from a Choi matrix.
///
/// Operators are ordered by descending Choi eigenvalue (ties broken by a
/// lexicographic comparison of the real parts of the phase-fixed eigenvector
/// entries); eigenvalues below 1e-12 are dropped. Each operator satisfies
/// ||A_k||_inf^2 <= d * lambda_k.
pub fn canonical_kraus(choi: &ChoiMatrix) -> Result<KrausChannel> {
    let d = choi.dim();
    let (vals, vecs) = hermitian_eigen(choi.matrix());
    if vals[0] < -TOL_STRUCT {
        return Err(Error::NotCompletelyPositive(vals[0]));
    }
    let n = vals.len();
    let mut entries: Vec<(f64, Vec<Complex64>)> = Vec::new();
    for i in 0..n {
        let lambda = vals[i];
        if lambda < 1e-12 {
            continue;
        }
        let mut v: Vec<Complex64> = vecs.column(i).iter().copied().collect();
        fix_vector_phase(&mut v);
        entries.push((lambda, v));
    }
    // Descending eigenvalue; near-degenerate eigenvalues ordered by the real
    // parts of the eigenvector entries.
    entries.sort_by(|a, b| {
        if (a.0 - b.0).abs() > 1e-12 {
            return b.0.partial_cmp(&a.0).unwrap();
        }
        for (x, y) in a.1.iter().zip(&b.1) {
            match x.re.partial_cmp(&y.re).unwrap() {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        std::cmp::Ordering::Equal
    });
    let mut kraus = Vec::with_capacity(entries.len());
    for (lambda, v) in &entries {
        let scale = cr((*lambda * d as f64).sqrt());
        let mut a = CMat::zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                // Eigenvector component at (reference j, output i).
                a[(i, j)] = scale * v[j * d + i];
            }
        }
        kraus.push(a);
    }
    KrausChannel::new(d, kraus)
}

/// Rotate a vector's phase so its largest-magnitude entry is real positive.
fn fix_vector_phase(v: &mut [Complex64]) {
    let mut best = 0usize;
    let mut best_norm = 0.0f64;
    for (i, x) in v.iter().enumerate() {
        let n = x.norm();
        if n > best_norm + 1e-15 {
            best_norm = n;
            best = i;
        }
    }
    if best_norm > 0.0 {
        let phase = v[best] / cr(best_norm);
        for x in v.iter_mut() {
            *x /= phase;
        }
    }
}

/// Exact average over all 4^k Pauli conjugations of a 2^k-dimensional
/// channel: C'(rho) = 4^-k sum_P P C(P rho P) P. The result is a Pauli
/// channel, returned in canonical (compressed) Kraus form.
pub fn pauli_twirl(ch: &KrausChannel, k: usize) -> Result<KrausChannel> {
    let d = 1usize << k;
    if ch.dim() != d {
        return Err(Error::Dimension(format!(
            "pauli_twirl: channel dim {} is not 2^{k}",
            ch.dim()
        )));
    }
    let basis = pauli_basis(k);
    let scale = cr(1.0 / d as f64);
    let mut kraus = Vec::with_capacity(basis.len() * ch.kraus().len());
    for p in &basis {
        for a in ch.kraus() {
            kraus.push(p * a * p * scale);
        }
    }
    let raw = KrausChannel::new(d, kraus)?;
    canonical_kraus(&choi_from_kraus(&raw)?)
}

/// Worst-case infidelity of a qubit channel:
/// 1 - min over pure states of <psi| C(|psi><psi|) |psi>.
///
/// Minimized over the Bloch sphere with a 64x128 grid followed by
/// pattern-search refinement to 1e-10 in the objective.
pub fn worst_case_infidelity(ch: &KrausChannel) -> Result<f64> {
    if ch.dim() != 2 {
        return Err(Error::Unsupported(
            "worst_case_infidelity is only defined for qubit channels".into(),
        ));
    }
    let fidelity = |theta: f64, phi: f64| -> f64 {
        let a = cr((theta / 2.0).cos());
        let b = c(phi.cos(), phi.sin()) * cr((theta / 2.0).sin());
        let mut f = 0.0;
        for op in ch.kraus() {
            let amp = a.conj() * (op[(0, 0)] * a + op[(0, 1)] * b)
                + b.conj() * (op[(1, 0)] * a + op[(1, 1)] * b);
            f += amp.norm_sqr();
        }
        f
    };
    let (n_theta, n_phi) = (64usize, 128usize);
    let mut best = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..n_theta {
        let theta = std::f64::consts::PI * (i as f64 + 0.5) / n_theta as f64;
        for j in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
            let f = fidelity(theta, phi);
            if f < best.2 {
                best = (theta, phi, f);
            }
        }
    }
    let (mut th, mut ph, mut f) = best;
    let mut step = std::f64::consts::PI / n_theta as f64;
    while step > 1e-9 {
        let mut improved = false;
        for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let t2 = (th + dt).clamp(0.0, std::f64::consts::PI);
            let p2 = ph + dp;
            let f2 = fidelity(t2, p2);
            if f2 < f - 1e-16 {
                th = t2;
                ph = p2;
                f = f2;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((1.0 - f).clamp(0.0, 1.0))
}
