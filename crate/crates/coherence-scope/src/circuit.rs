//! Density-matrix simulation of the protocol circuits: noisy gates,
//! mid-circuit measure/reset, randomized compiling, noisy measurement
//! (POVM), and noisy preparation.
//!
//! Mid-circuit measurements are handled by a two-branch parity-weighted
//! state (`ParityState`): every measurement outcome feeds a running parity
//! bit and resets the measured qubit, so the cost stays linear in circuit
//! length with matrices of size 2^(physical qubits).

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{pauli_twirl, ChannelSpec, KrausChannel};
use crate::error::{Error, Result};
use crate::ghz::{ChannelAssignment, GhzBasis, GhzResultRow, YPhase};
use crate::linalg::{
    self, c, cr, cmat_serde, identity, insert_ground_at, pauli_basis, paulis, trace_out_with_op,
    CMat, CVec, TOL_STRUCT,
};
use crate::rng;

const MAX_QUBITS: usize = 10;

/// Measurement basis for a single-qubit measurement element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasBasis {
    X,
    Y,
    Z,
}

impl MeasBasis {
    /// Basis-change unitary V with V|0> = |0_B>, V|1> = |1_B>.
    pub fn change_of_basis(&self) -> CMat {
        let s = 1.0 / 2.0f64.sqrt();
        match self {
            MeasBasis::Z => identity(2),
            MeasBasis::X => CMat::from_row_slice(2, 2, &[cr(s), cr(s), cr(s), cr(-s)]),
            MeasBasis::Y => CMat::from_row_slice(2, 2, &[cr(s), cr(s), c(0.0, s), c(0.0, -s)]),
        }
    }
}

/// Two-outcome POVM M_0 = U D U', M_1 = U (I - D) U' modeling a noisy
/// single-qubit measurement. The ideal measurement has U = I, D = diag(1, 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyMeasurement {
    #[serde(with = "cmat_serde")]
    pub u: CMat,
    pub d: [f64; 2],
}

impl NoisyMeasurement {
    pub fn new(u: CMat, d: [f64; 2]) -> Result<Self> {
        if u.nrows() != 2 || linalg::unitarity_error(&u) > TOL_STRUCT {
            return Err(Error::Validation("measurement basis change must be a 2x2 unitary".into()));
        }
        if d.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Validation("measurement D entries must lie in [0, 1]".into()));
        }
        Ok(NoisyMeasurement { u, d })
    }

    pub fn ideal() -> Self {
        NoisyMeasurement { u: identity(2), d: [1.0, 0.0] }
    }

    /// POVM elements (M_0, M_1) in the measurement device frame.
    pub fn povm(&self) -> (CMat, CMat) {
        let mut dm = CMat::zeros(2, 2);
        dm[(0, 0)] = cr(self.d[0]);
        dm[(1, 1)] = cr(self.d[1]);
        let m0 = &self.u * &dm * self.u.adjoint();
        let m1 = identity(2) - &m0;
        (m0, m1)
    }

    /// I/Z twirl: the diagonal restriction of the POVM in its device frame.
    pub fn iz_twirled(&self) -> NoisyMeasurement {
        let (m0, _) = self.povm();
        NoisyMeasurement { u: identity(2), d: [m0[(0, 0)].re.clamp(0.0, 1.0), m0[(1, 1)].re.clamp(0.0, 1.0)] }
    }
}

/// The single-qubit state actually produced when |0> is requested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyPrep {
    #[serde(with = "cmat_serde")]
    pub rho: CMat,
}

impl NoisyPrep {
    pub fn new(rho: CMat) -> Result<Self> {
        if rho.nrows() != 2 {
            return Err(Error::Dimension("prep state must be 2x2".into()));
        }
        if linalg::hermiticity_error(&rho) > TOL_STRUCT {
            return Err(Error::Validation("prep state must be Hermitian".into()));
        }
        if (rho.trace().re - 1.0).abs() > TOL_STRUCT {
            return Err(Error::Validation("prep state must have trace 1".into()));
        }
        let (vals, _) = linalg::hermitian_eigen(&rho);
        if vals.iter().any(|&v| v < -TOL_STRUCT) {
            return Err(Error::Validation("prep state must be PSD".into()));
        }
        Ok(NoisyPrep { rho })
    }

    pub fn ideal() -> Self {
        let mut rho = CMat::zeros(2, 2);
        rho[(0, 0)] = cr(1.0);
        NoisyPrep { rho }
    }

    /// Pure-state prep U|0>.
    pub fn from_unitary(u: &CMat) -> Result<Self> {
        let ket = u.column(0).into_owned();
        NoisyPrep::new(&ket * ket.adjoint())
    }

    /// I/Z twirl: rho' = (rho + Z rho Z)/2 = diag(rho00, rho11).
    pub fn iz_twirled(&self) -> NoisyPrep {
        let mut rho = CMat::zeros(2, 2);
        rho[(0, 0)] = cr(self.rho[(0, 0)].re);
        rho[(1, 1)] = cr(self.rho[(1, 1)].re);
        NoisyPrep { rho }
    }

    /// Channel that discards the qubit and emits this state.
    pub fn replace_channel(&self) -> KrausChannel {
        let (vals, vecs) = linalg::hermitian_eigen(&self.rho);
        let mut kraus = Vec::new();
        for (i, &v) in vals.iter().enumerate() {
            if v <= 1e-15 {
                continue;
            }
            let chi = vecs.column(i);
            for b in 0..2 {
                let mut op = CMat::zeros(2, 2);
                for r in 0..2 {
                    op[(r, b)] = chi[r] * cr(v.sqrt());
                }
                kraus.push(op);
            }
        }
        KrausChannel::new(2, kraus).expect("replace channel is trace preserving")
    }
}

/// Ideal unitary followed by an optional noise channel on the same qubits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyGate {
    pub name: String,
    #[serde(with = "cmat_serde")]
    pub ideal: CMat,
    pub noise: Option<KrausChannel>,
    pub twirlable: bool,
}

impl NoisyGate {
    pub fn new(
        name: impl Into<String>,
        ideal: CMat,
        noise: Option<KrausChannel>,
        twirlable: bool,
    ) -> Result<Self> {
        let dim = ideal.nrows();
        if dim != 2 && dim != 4 {
            return Err(Error::Dimension("gates act on 1 or 2 qubits".into()));
        }
        if linalg::unitarity_error(&ideal) > TOL_STRUCT {
            return Err(Error::Validation("gate ideal part must be unitary".into()));
        }
        if let Some(ch) = &noise {
            if ch.dim() != dim {
                return Err(Error::Dimension("gate noise must match the gate dimension".into()));
            }
        }
        Ok(NoisyGate { name: name.into(), ideal, noise, twirlable })
    }

    pub fn qubit_count(&self) -> usize {
        if self.ideal.nrows() == 2 {
            1
        } else {
            2
        }
    }

    /// Conjugation check: G P G' must be a Pauli (up to phase) for every
    /// Pauli P on the gate's qubits.
    pub fn is_clifford(&self) -> bool {
        let k = self.qubit_count();
        let basis = pauli_basis(k);
        let dim = self.ideal.nrows() as f64;
        for p in &basis {
            let conj = &self.ideal * p * self.ideal.adjoint();
            let mut matched = false;
            for q in &basis {
                let overlap = (q.adjoint() * &conj).trace().norm() / dim;
                if (overlap - 1.0).abs() < 1e-8 {
                    matched = true;
                    break;
                }
            }
            if !matched {
                return false;
            }
        }
        true
    }
}

/// Common gates.
pub mod gates {
    use super::*;

    pub fn hadamard(noise: Option<KrausChannel>) -> NoisyGate {
        let s = 1.0 / 2.0f64.sqrt();
        let h = CMat::from_row_slice(2, 2, &[cr(s), cr(s), cr(s), cr(-s)]);
        NoisyGate::new("h", h, noise, true).expect("valid gate")
    }

    pub fn phase_s(noise: Option<KrausChannel>) -> NoisyGate {
        let s = CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), c(0.0, 1.0)]);
        NoisyGate::new("s", s, noise, true).expect("valid gate")
    }

    pub fn pauli_gate(idx: usize) -> NoisyGate {
        let p = paulis()[idx].clone();
        let name = ["i", "x", "y", "z"][idx];
        NoisyGate::new(name, p, None, false).expect("valid gate")
    }

    pub fn cnot(noise: Option<KrausChannel>) -> NoisyGate {
        let mut m = CMat::zeros(4, 4);
        m[(0, 0)] = cr(1.0);
        m[(1, 1)] = cr(1.0);
        m[(2, 3)] = cr(1.0);
        m[(3, 2)] = cr(1.0);
        NoisyGate::new("cnot", m, noise, true).expect("valid gate")
    }

    /// Rotation into the GHZ basis: |0> -> |0_P>. None when no gate is
    /// needed (basis Z).
    pub fn basis_rotation(
        basis: GhzBasis,
        y_phase: YPhase,
        noise: Option<KrausChannel>,
    ) -> Option<NoisyGate> {
        let s = 1.0 / 2.0f64.sqrt();
        match (basis, y_phase) {
            (GhzBasis::Z, _) => None,
            (GhzBasis::X, _) => Some(hadamard(noise)),
            (GhzBasis::Y, YPhase::Standard) => {
                // S H maps |0> -> |0_Y>, |1> -> |1_Y>.
                let m = CMat::from_row_slice(2, 2, &[cr(s), cr(s), c(0.0, s), c(0.0, -s)]);
                Some(NoisyGate::new("s_h", m, noise, true).expect("valid gate"))
            }
            (GhzBasis::Y, YPhase::Alternate) => {
                let m = CMat::from_row_slice(2, 2, &[cr(s), c(0.0, s), c(0.0, s), cr(s)]);
                Some(NoisyGate::new("y_alt", m, noise, true).expect("valid gate"))
            }
        }
    }

    /// Rotation from the parity-measurement basis to the computational
    /// basis. None when the qubits are measured directly in Z.
    pub fn measurement_rotation(
        basis: GhzBasis,
        y_phase: YPhase,
        noise: Option<KrausChannel>,
    ) -> Option<NoisyGate> {
        match (basis, y_phase) {
            (GhzBasis::Z, _) => Some(hadamard(noise)),
            (GhzBasis::X, _) => None,
            (GhzBasis::Y, YPhase::Standard) => None,
            (GhzBasis::Y, YPhase::Alternate) => Some(hadamard(noise)),
        }
    }
}

/// One circuit element.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Element {
    Prep { qubit: usize, prep: Option<NoisyPrep>, twirl: bool },
    Gate { qubits: Vec<usize>, gate: NoisyGate },
    ChannelInsert { qubit: usize, channel: KrausChannel },
    MeasureReset { qubit: usize, basis: MeasBasis, meas: Option<NoisyMeasurement>, twirl: bool },
    FinalMeasure { qubits: Vec<usize>, basis: MeasBasis, meas: Option<NoisyMeasurement>, twirl: bool },
}

/// An ordered list of elements over a fixed set of physical qubits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub qubit_count: usize,
    pub elements: Vec<Element>,
}

impl CircuitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.qubit_count == 0 {
            return Err(Error::Validation("circuit needs at least one qubit".into()));
        }
        if self.qubit_count > MAX_QUBITS {
            return Err(Error::SizeCap { size: self.qubit_count, cap: MAX_QUBITS });
        }
        for (i, el) in self.elements.iter().enumerate() {
            let qubits: Vec<usize> = match el {
                Element::Prep { qubit, .. } => vec![*qubit],
                Element::Gate { qubits, gate } => {
                    if qubits.len() != gate.qubit_count() {
                        return Err(Error::Validation(format!(
                            "element {i}: gate {} expects {} qubits, got {}",
                            gate.name,
                            gate.qubit_count(),
                            qubits.len()
                        )));
                    }
                    if qubits.len() == 2 && qubits[0] == qubits[1] {
                        return Err(Error::Validation(format!("element {i}: repeated qubit")));
                    }
                    qubits.clone()
                }
                Element::ChannelInsert { qubit, channel } => {
                    if channel.dim() != 2 {
                        return Err(Error::Dimension(format!(
                            "element {i}: circuit channel inserts must be qubit channels"
                        )));
                    }
                    vec![*qubit]
                }
                Element::MeasureReset { qubit, .. } => vec![*qubit],
                Element::FinalMeasure { qubits, .. } => qubits.clone(),
            };
            for q in qubits {
                if q >= self.qubit_count {
                    return Err(Error::Validation(format!(
                        "element {i}: qubit {q} out of range (count {})",
                        self.qubit_count
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of ChannelInsert elements, in circuit order.
    pub fn channel_locations(&self) -> Vec<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, Element::ChannelInsert { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy with the element at `index` removed.
    pub fn without_element(&self, index: usize) -> CircuitSpec {
        let mut elements = self.elements.clone();
        elements.remove(index);
        CircuitSpec { qubit_count: self.qubit_count, elements }
    }
}

/// Unnormalized even/odd-parity branches of the register state.
pub struct ParityState {
    pub even: CMat,
    pub odd: CMat,
}

impl ParityState {
    fn trace_sum(&self) -> Complex64 {
        self.even.trace() + self.odd.trace()
    }
}

fn povm_in_basis(meas: &NoisyMeasurement, basis: MeasBasis) -> (CMat, CMat) {
    let (m0, m1) = meas.povm();
    let v = basis.change_of_basis();
    (&v * m0 * v.adjoint(), &v * m1 * v.adjoint())
}

fn apply_measure(
    state: &ParityState,
    qubit: usize,
    basis: MeasBasis,
    meas: &Option<NoisyMeasurement>,
    k: usize,
) -> ParityState {
    let meas = meas.clone().unwrap_or_else(NoisyMeasurement::ideal);
    let (e0, e1) = povm_in_basis(&meas, basis);
    let even_keep = insert_ground_at(&trace_out_with_op(&state.even, &e0, qubit, k, 2), qubit, k, 2);
    let even_flip = insert_ground_at(&trace_out_with_op(&state.even, &e1, qubit, k, 2), qubit, k, 2);
    let odd_keep = insert_ground_at(&trace_out_with_op(&state.odd, &e0, qubit, k, 2), qubit, k, 2);
    let odd_flip = insert_ground_at(&trace_out_with_op(&state.odd, &e1, qubit, k, 2), qubit, k, 2);
    ParityState { even: even_keep + odd_flip, odd: even_flip + odd_keep }
}

fn apply_element_linear(rho: &CMat, el: &Element, k: usize) -> Result<CMat> {
    match el {
        Element::Prep { qubit, prep, .. } => {
            let ch = prep.clone().unwrap_or_else(NoisyPrep::ideal).replace_channel();
            ch.apply_at(rho, *qubit, k)
        }
        Element::Gate { qubits, gate } => {
            let mut out = linalg::conjugate_at(rho, &gate.ideal, qubits, k, 2);
            if let Some(noise) = &gate.noise {
                out = noise.apply_multi(&out, qubits, k, 2)?;
            }
            Ok(out)
        }
        Element::ChannelInsert { qubit, channel } => channel.apply_at(rho, *qubit, k),
        _ => Err(Error::Unsupported("measurement element in linear-only context".into())),
    }
}

/// Probability of even total parity after running the circuit.
pub fn simulate_parity_acceptance(circuit: &CircuitSpec) -> Result<f64> {
    circuit.validate()?;
    let k = circuit.qubit_count;
    let dim = 1usize << k;
    let mut even = CMat::zeros(dim, dim);
    even[(0, 0)] = cr(1.0);
    let mut state = ParityState { even, odd: CMat::zeros(dim, dim) };
    for el in &circuit.elements {
        state = match el {
            Element::MeasureReset { qubit, basis, meas, .. } => {
                apply_measure(&state, *qubit, *basis, meas, k)
            }
            Element::FinalMeasure { qubits, basis, meas, .. } => {
                let mut s = state;
                for q in qubits {
                    s = apply_measure(&s, *q, *basis, meas, k);
                }
                s
            }
            other => ParityState {
                even: apply_element_linear(&state.even, other, k)?,
                odd: apply_element_linear(&state.odd, other, k)?,
            },
        };
        let tr = state.trace_sum();
        if (tr.re - 1.0).abs() > TOL_STRUCT || tr.im.abs() > TOL_STRUCT {
            return Err(Error::Consistency(format!(
                "parity-state trace drifted to {tr} during simulation"
            )));
        }
    }
    Ok(state.even.trace().re.clamp(0.0, 1.0))
}

/// Final density matrix of a measurement-free circuit.
pub fn simulate_state(circuit: &CircuitSpec) -> Result<CMat> {
    circuit.validate()?;
    let k = circuit.qubit_count;
    let dim = 1usize << k;
    let mut rho = CMat::zeros(dim, dim);
    rho[(0, 0)] = cr(1.0);
    for el in &circuit.elements {
        rho = apply_element_linear(&rho, el, k)?;
    }
    Ok(rho)
}

/// Pure output state of the ideal circuit: noise channels, gate noise, and
/// prep noise are all stripped. Errors on measurement elements.
pub fn ideal_state(circuit: &CircuitSpec) -> Result<CVec> {
    circuit.validate()?;
    let k = circuit.qubit_count;
    let dim = 1usize << k;
    let mut psi = CVec::zeros(dim);
    psi[0] = cr(1.0);
    for el in &circuit.elements {
        match el {
            Element::Prep { .. } | Element::ChannelInsert { .. } => {}
            Element::Gate { qubits, gate } => {
                let as_col = CMat::from_column_slice(dim, 1, psi.as_slice());
                let moved = linalg::left_mult_at(&as_col, &gate.ideal, qubits, k, 2);
                psi = CVec::from_column_slice(moved.column(0).as_slice());
            }
            _ => {
                return Err(Error::Unsupported(
                    "ideal_state does not support measurement elements".into(),
                ))
            }
        }
    }
    Ok(psi)
}

/// Fidelity <psi_ideal| rho |psi_ideal> of the noisy output to the ideal
/// pure output.
pub fn fidelity_to_ideal(circuit: &CircuitSpec) -> Result<f64> {
    let rho = simulate_state(circuit)?;
    let psi = ideal_state(circuit)?;
    let f = (psi.adjoint() * &rho * &psi)[(0, 0)];
    if f.im.abs() > 1e-9 {
        return Err(Error::Consistency(format!("fidelity has imaginary part {:.3e}", f.im)));
    }
    Ok(f.re.clamp(0.0, 1.0))
}

/// Outcome distribution over all measurement events, in chronological
/// outcome order. Branch count is capped at 1024.
pub fn simulate_distribution(circuit: &CircuitSpec) -> Result<Vec<(Vec<u8>, f64)>> {
    circuit.validate()?;
    let k = circuit.qubit_count;
    let dim = 1usize << k;
    let mut init = CMat::zeros(dim, dim);
    init[(0, 0)] = cr(1.0);
    let mut branches: Vec<(Vec<u8>, CMat)> = vec![(Vec::new(), init)];
    let measure_branch = |branches: &mut Vec<(Vec<u8>, CMat)>,
                              qubit: usize,
                              basis: MeasBasis,
                              meas: &Option<NoisyMeasurement>|
     -> Result<()> {
        if branches.len() * 2 > 1024 {
            return Err(Error::SizeCap { size: branches.len() * 2, cap: 1024 });
        }
        let m = meas.clone().unwrap_or_else(NoisyMeasurement::ideal);
        let (e0, e1) = povm_in_basis(&m, basis);
        let mut next = Vec::with_capacity(branches.len() * 2);
        for (outcomes, rho) in branches.iter() {
            for (bit, e) in [(0u8, &e0), (1u8, &e1)] {
                let reduced = insert_ground_at(&trace_out_with_op(rho, e, qubit, k, 2), qubit, k, 2);
                let mut tagged = outcomes.clone();
                tagged.push(bit);
                next.push((tagged, reduced));
            }
        }
        *branches = next;
        Ok(())
    };
    for el in &circuit.elements {
        match el {
            Element::MeasureReset { qubit, basis, meas, .. } => {
                measure_branch(&mut branches, *qubit, *basis, meas)?;
            }
            Element::FinalMeasure { qubits, basis, meas, .. } => {
                for q in qubits {
                    measure_branch(&mut branches, *q, *basis, meas)?;
                }
            }
            other => {
                for (_, rho) in branches.iter_mut() {
                    *rho = apply_element_linear(rho, other, k)?;
                }
            }
        }
    }
    let mut out: Vec<(Vec<u8>, f64)> = branches
        .into_iter()
        .map(|(outcomes, rho)| (outcomes, rho.trace().re.max(0.0)))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Classical (Bhattacharyya) fidelity between two outcome distributions:
/// (sum_o sqrt(p_o q_o))^2.
pub fn distribution_fidelity(a: &[(Vec<u8>, f64)], b: &[(Vec<u8>, f64)]) -> f64 {
    let mut bmap = std::collections::BTreeMap::new();
    for (o, p) in b {
        bmap.insert(o.clone(), *p);
    }
    let mut s = 0.0;
    for (o, p) in a {
        if let Some(q) = bmap.get(o) {
            s += (p * q).max(0.0).sqrt();
        }
    }
    s * s
}

/// Twirl handling for a circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwirlMode {
    Off,
    Exact,
    Sampled { frames: usize, seed: u64 },
}

fn require_clifford(gate: &NoisyGate) -> Result<()> {
    if !gate.is_clifford() {
        return Err(Error::Unsupported(format!(
            "twirlable gate {:?} is not in the Clifford group",
            gate.name
        )));
    }
    Ok(())
}

/// Exact analytic twirl: every twirlable gate's noise is replaced by its
/// Pauli twirl, twirl-marked preps and measurements by their I/Z twirls.
/// Channel inserts are never touched.
pub fn compile_exact_twirl(circuit: &CircuitSpec) -> Result<CircuitSpec> {
    let mut elements = Vec::with_capacity(circuit.elements.len());
    for el in &circuit.elements {
        let compiled = match el {
            Element::Gate { qubits, gate } if gate.twirlable => {
                require_clifford(gate)?;
                let noise = match &gate.noise {
                    Some(ch) => Some(pauli_twirl(ch, gate.qubit_count())?),
                    None => None,
                };
                Element::Gate {
                    qubits: qubits.clone(),
                    gate: NoisyGate { noise, ..gate.clone() },
                }
            }
            Element::Prep { qubit, prep, twirl } if *twirl => Element::Prep {
                qubit: *qubit,
                prep: prep.as_ref().map(|p| p.iz_twirled()),
                twirl: *twirl,
            },
            Element::MeasureReset { qubit, basis, meas, twirl } if *twirl => {
                Element::MeasureReset {
                    qubit: *qubit,
                    basis: *basis,
                    meas: meas.as_ref().map(|m| m.iz_twirled()),
                    twirl: *twirl,
                }
            }
            Element::FinalMeasure { qubits, basis, meas, twirl } if *twirl => {
                Element::FinalMeasure {
                    qubits: qubits.clone(),
                    basis: *basis,
                    meas: meas.as_ref().map(|m| m.iz_twirled()),
                    twirl: *twirl,
                }
            }
            other => other.clone(),
        };
        elements.push(compiled);
    }
    Ok(CircuitSpec { qubit_count: circuit.qubit_count, elements })
}

/// Sampled randomized compiling: emits `frames` circuits with concrete
/// random Pauli frames. Each twirlable gate G gets Q = G'PG before and P
/// after, so the frame returns to the identity between elements; prep and
/// measurement twirls insert I/Z in the element's own frame.
pub fn compile_sampled_frames(
    circuit: &CircuitSpec,
    frames: usize,
    seed: u64,
) -> Result<Vec<CircuitSpec>> {
    let mut out = Vec::with_capacity(frames);
    for frame in 0..frames {
        let mut stream = rng::derive_stream(seed, &["twirl-frame"], &[frame as u64]);
        let mut elements = Vec::new();
        for el in &circuit.elements {
            match el {
                Element::Gate { qubits, gate } if gate.twirlable => {
                    require_clifford(gate)?;
                    let k = gate.qubit_count();
                    let basis = pauli_basis(k);
                    let pick = stream.random_range(0..basis.len());
                    let p = &basis[pick];
                    let q = gate.ideal.adjoint() * p * &gate.ideal;
                    elements.push(Element::Gate {
                        qubits: qubits.clone(),
                        gate: NoisyGate::new("frame_pre", q, None, false)?,
                    });
                    elements.push(Element::Gate {
                        qubits: qubits.clone(),
                        gate: NoisyGate { twirlable: false, ..gate.clone() },
                    });
                    elements.push(Element::Gate {
                        qubits: qubits.clone(),
                        gate: NoisyGate::new("frame_post", p.clone(), None, false)?,
                    });
                }
                Element::Prep { qubit, prep, twirl } if *twirl => {
                    elements.push(Element::Prep {
                        qubit: *qubit,
                        prep: prep.clone(),
                        twirl: false,
                    });
                    if stream.random_range(0..2u8) == 1 {
                        elements.push(Element::Gate {
                            qubits: vec![*qubit],
                            gate: gates::pauli_gate(3),
                        });
                    }
                }
                Element::MeasureReset { qubit, basis, meas, twirl } if *twirl => {
                    if stream.random_range(0..2u8) == 1 {
                        elements.push(frame_z_in_basis(*qubit, *basis)?);
                    }
                    elements.push(Element::MeasureReset {
                        qubit: *qubit,
                        basis: *basis,
                        meas: meas.clone(),
                        twirl: false,
                    });
                }
                Element::FinalMeasure { qubits, basis, meas, twirl } if *twirl => {
                    let mut remaining = Vec::new();
                    for q in qubits {
                        if stream.random_range(0..2u8) == 1 {
                            remaining.push((*q, true));
                        } else {
                            remaining.push((*q, false));
                        }
                    }
                    for (q, flip) in &remaining {
                        if *flip {
                            elements.push(frame_z_in_basis(*q, *basis)?);
                        }
                        elements.push(Element::FinalMeasure {
                            qubits: vec![*q],
                            basis: *basis,
                            meas: meas.clone(),
                            twirl: false,
                        });
                    }
                }
                other => elements.push(other.clone()),
            }
        }
        out.push(CircuitSpec { qubit_count: circuit.qubit_count, elements });
    }
    Ok(out)
}

fn frame_z_in_basis(qubit: usize, basis: MeasBasis) -> Result<Element> {
    let v = basis.change_of_basis();
    let z = paulis()[3].clone();
    let op = &v * z * v.adjoint();
    Ok(Element::Gate { qubits: vec![qubit], gate: NoisyGate::new("frame_z", op, None, false)? })
}

/// Physical layout of the GHZ protocol circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Full,
    TwoQubit,
}

/// Noise bindings for the GHZ protocol circuits.
#[derive(Debug, Clone, Default)]
pub struct GhzCircuitNoise {
    /// Noise after every single-qubit encoding/measurement-rotation gate.
    pub sq_gate: Option<KrausChannel>,
    /// Noise after every CNOT.
    pub cnot: Option<KrausChannel>,
    pub prep: Option<NoisyPrep>,
    pub measurement: Option<NoisyMeasurement>,
    /// Twirl annotation on measurements (off when the measurement itself is
    /// under test).
    pub meas_twirl: bool,
    /// The channel inserts under test, if any.
    pub channel: Option<ChannelAssignment>,
}

/// What occupies the per-qubit slot between encoding and measurement.
enum Slot<'a> {
    Channel(Option<&'a ChannelAssignment>),
    GateTest { f: &'a NoisyGate, fdag_noise: Option<&'a KrausChannel> },
}

impl Slot<'_> {
    fn elements(&self, qubit: usize, qubit_index_in_state: usize) -> Result<Vec<Element>> {
        match self {
            Slot::Channel(None) => Ok(vec![]),
            Slot::Channel(Some(assignment)) => {
                let chs = assignment.for_n(qubit_index_in_state + 1)?;
                Ok(vec![Element::ChannelInsert {
                    qubit,
                    channel: (*chs[qubit_index_in_state]).clone(),
                }])
            }
            Slot::GateTest { f, fdag_noise } => {
                let fdag = NoisyGate::new(
                    format!("{}_dag", f.name),
                    f.ideal.adjoint(),
                    (*fdag_noise).cloned(),
                    true,
                )?;
                let f_gate = NoisyGate { twirlable: false, ..(*f).clone() };
                Ok(vec![
                    Element::Gate { qubits: vec![qubit], gate: fdag },
                    Element::Gate { qubits: vec![qubit], gate: f_gate },
                ])
            }
        }
    }
}

fn build_ghz_with_slot(
    n: usize,
    basis: GhzBasis,
    layout: Layout,
    noise: &GhzCircuitNoise,
    slot: &Slot<'_>,
    y_phase: YPhase,
) -> Result<CircuitSpec> {
    if n < 2 {
        return Err(Error::Validation("GHZ circuits need n >= 2".into()));
    }
    let mut elements = Vec::new();
    let prep = noise.prep.clone();
    let h0 = gates::hadamard(noise.sq_gate.clone());
    let rot = |q: usize| gates::basis_rotation(basis, y_phase, noise.sq_gate.clone()).map(
        |gate| Element::Gate { qubits: vec![q], gate },
    );
    let meas_rot = |q: usize| gates::measurement_rotation(basis, y_phase, noise.sq_gate.clone())
        .map(|gate| Element::Gate { qubits: vec![q], gate });
    match layout {
        Layout::Full => {
            if n > MAX_QUBITS {
                return Err(Error::SizeCap { size: n, cap: MAX_QUBITS });
            }
            for q in 0..n {
                elements.push(Element::Prep { qubit: q, prep: prep.clone(), twirl: true });
            }
            elements.push(Element::Gate { qubits: vec![0], gate: h0.clone() });
            for q in 1..n {
                elements.push(Element::Gate {
                    qubits: vec![0, q],
                    gate: gates::cnot(noise.cnot.clone()),
                });
            }
            for q in 0..n {
                if let Some(el) = rot(q) {
                    elements.push(el);
                }
            }
            for q in 0..n {
                elements.extend(slot.elements(q, q)?);
            }
            for q in 0..n {
                if let Some(el) = meas_rot(q) {
                    elements.push(el);
                }
            }
            elements.push(Element::FinalMeasure {
                qubits: (0..n).collect(),
                basis: MeasBasis::Z,
                meas: noise.measurement.clone(),
                twirl: noise.meas_twirl,
            });
        }
        Layout::TwoQubit => {
            elements.push(Element::Prep { qubit: 0, prep: prep.clone(), twirl: true });
            elements.push(Element::Prep { qubit: 1, prep: prep.clone(), twirl: true });
            elements.push(Element::Gate { qubits: vec![0], gate: h0.clone() });
            for cycle in 1..n {
                if cycle > 1 {
                    elements.push(Element::Prep { qubit: 1, prep: prep.clone(), twirl: true });
                }
                elements.push(Element::Gate {
                    qubits: vec![0, 1],
                    gate: gates::cnot(noise.cnot.clone()),
                });
                if let Some(el) = rot(1) {
                    elements.push(el);
                }
                elements.extend(slot.elements(1, cycle)?);
                if let Some(el) = meas_rot(1) {
                    elements.push(el);
                }
                elements.push(Element::MeasureReset {
                    qubit: 1,
                    basis: MeasBasis::Z,
                    meas: noise.measurement.clone(),
                    twirl: noise.meas_twirl,
                });
            }
            if let Some(el) = rot(0) {
                elements.push(el);
            }
            elements.extend(slot.elements(0, 0)?);
            if let Some(el) = meas_rot(0) {
                elements.push(el);
            }
            elements.push(Element::FinalMeasure {
                qubits: vec![0],
                basis: MeasBasis::Z,
                meas: noise.measurement.clone(),
                twirl: noise.meas_twirl,
            });
        }
    }
    let qubit_count = match layout {
        Layout::Full => n,
        Layout::TwoQubit => 2,
    };
    let spec = CircuitSpec { qubit_count, elements };
    spec.validate()?;
    Ok(spec)
}

/// GHZ protocol circuit per the standard construction: Hadamard, a CNOT
/// chain from qubit 0, per-qubit basis rotation, the channel slot, the
/// measurement rotation, and parity measurements. The two-qubit layout
/// interleaves n-1 measure/reset cycles on one physical qubit.
pub fn build_ghz_circuit(
    n: usize,
    basis: GhzBasis,
    layout: Layout,
    noise: &GhzCircuitNoise,
    y_phase: YPhase,
) -> Result<CircuitSpec> {
    build_ghz_with_slot(n, basis, layout, noise, &Slot::Channel(noise.channel.as_ref()), y_phase)
}

fn acceptance_with_twirl(circuit: &CircuitSpec, twirl: TwirlMode) -> Result<f64> {
    match twirl {
        TwirlMode::Off => simulate_parity_acceptance(circuit),
        TwirlMode::Exact => simulate_parity_acceptance(&compile_exact_twirl(circuit)?),
        TwirlMode::Sampled { frames, seed } => {
            if frames == 0 {
                return Err(Error::Validation("sampled twirl needs frames >= 1".into()));
            }
            let compiled = compile_sampled_frames(circuit, frames, seed)?;
            let mut acc = 0.0;
            for c in &compiled {
                acc += simulate_parity_acceptance(c)?;
            }
            Ok(acc / frames as f64)
        }
    }
}

/// Shared configuration for the circuit-level protocol runners.
#[derive(Debug, Clone)]
pub struct CircuitProtocolConfig {
    pub n_values: Vec<usize>,
    pub shots: u64,
    pub seed: u64,
    pub layout: Layout,
    pub twirl: TwirlMode,
    pub y_phase: YPhase,
    pub encoding_noise: GhzCircuitNoise,
}

impl Default for CircuitProtocolConfig {
    fn default() -> Self {
        CircuitProtocolConfig {
            n_values: (2..=12).step_by(2).collect(),
            shots: 0,
            seed: 0,
            layout: Layout::TwoQubit,
            twirl: TwirlMode::Exact,
            y_phase: YPhase::Standard,
            encoding_noise: GhzCircuitNoise { meas_twirl: true, ..Default::default() },
        }
    }
}

fn protocol_rows(
    label: &str,
    bases: &[GhzBasis],
    cfg: &CircuitProtocolConfig,
    mut acceptance: impl FnMut(GhzBasis, usize) -> Result<f64>,
) -> Result<Vec<GhzResultRow>> {
    let mut rows = Vec::new();
    for &basis in bases {
        for &n in &cfg.n_values {
            let accept = acceptance(basis, n)?;
            let p_exact = (1.0 - accept).clamp(0.0, 1.0);
            let row = if cfg.shots > 0 {
                let mut stream =
                    rng::derive_stream(cfg.seed, &[label, basis.label()], &[n as u64]);
                let count = rng::binomial(&mut stream, cfg.shots, p_exact);
                GhzResultRow {
                    basis,
                    n,
                    shots: cfg.shots,
                    error_count: Some(count),
                    p_error: count as f64 / cfg.shots as f64,
                    stderr: crate::ghz::binomial_stderr(count, cfg.shots),
                }
            } else {
                GhzResultRow { basis, n, shots: 0, error_count: None, p_error: p_exact, stderr: 0.0 }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Protocol for a single-qubit Clifford gate F: encode the GHZ state with
/// twirled gates, apply twirled F-dagger then untwirled F to each qubit,
/// and measure parities. With exact twirl and only F noisy this reduces to
/// the plain channel protocol on F's noise.
pub fn run_gate_protocol(
    f: &NoisyGate,
    fdag_noise: Option<&KrausChannel>,
    cfg: &CircuitProtocolConfig,
) -> Result<Vec<GhzResultRow>> {
    if f.qubit_count() != 1 {
        return Err(Error::Unsupported("gate protocol tests single-qubit gates".into()));
    }
    if !f.is_clifford() {
        return Err(Error::Unsupported(format!(
            "gate {:?} is not Clifford; the protocol twirls its inverse",
            f.name
        )));
    }
    let slot = Slot::GateTest { f, fdag_noise };
    protocol_rows("gate-protocol", &GhzBasis::ALL, cfg, |basis, n| {
        let circuit =
            build_ghz_with_slot(n, basis, cfg.layout, &cfg.encoding_noise, &slot, cfg.y_phase)?;
        acceptance_with_twirl(&circuit, cfg.twirl)
    })
}

/// Protocol for a noisy measurement: prepare psi_{n,X} and psi_{n,Y} with
/// twirled encoding and measure every qubit with the device under test
/// (untwirled).
pub fn run_measurement_protocol(
    meas: &NoisyMeasurement,
    cfg: &CircuitProtocolConfig,
) -> Result<Vec<GhzResultRow>> {
    let mut noise = cfg.encoding_noise.clone();
    noise.measurement = Some(meas.clone());
    noise.meas_twirl = false;
    noise.channel = None;
    protocol_rows(
        "measurement-protocol",
        &[GhzBasis::X, GhzBasis::Y],
        cfg,
        |basis, n| {
            let circuit = build_ghz_with_slot(
                n,
                basis,
                cfg.layout,
                &noise,
                &Slot::Channel(None),
                cfg.y_phase,
            )?;
            acceptance_with_twirl(&circuit, cfg.twirl)
        },
    )
}

/// Channel protocol run through the circuit simulator (rather than the
/// transfer product), for cross-engine checks and twirl studies.
pub fn run_circuit_channel_protocol(cfg: &CircuitProtocolConfig) -> Result<Vec<GhzResultRow>> {
    protocol_rows("circuit-channel-protocol", &GhzBasis::ALL, cfg, |basis, n| {
        let circuit = build_ghz_circuit(n, basis, cfg.layout, &cfg.encoding_noise, cfg.y_phase)?;
        acceptance_with_twirl(&circuit, cfg.twirl)
    })
}

/// Convenience constructor used by configs: channel spec -> assignment.
pub fn assignment_from_specs(uniform: Option<&ChannelSpec>, per_qubit: Option<&[ChannelSpec]>) -> Result<Option<ChannelAssignment>> {
    match (uniform, per_qubit) {
        (Some(_), Some(_)) => Err(Error::Validation(
            "give either a uniform channel or a per-qubit list, not both".into(),
        )),
        (Some(spec), None) => Ok(Some(ChannelAssignment::Uniform(spec.build()?))),
        (None, Some(specs)) => {
            let chans: Result<Vec<_>> = specs.iter().map(|s| s.build()).collect();
            Ok(Some(ChannelAssignment::PerQubit(chans?)))
        }
        (None, None) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::choi_from_kraus;
    use crate::ghz;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn rotation_channel(theta: f64, axis: [f64; 3]) -> KrausChannel {
        KrausChannel::rotation(theta, axis).unwrap()
    }

    #[test]
    fn fig1_structure() {
        let noise = GhzCircuitNoise { meas_twirl: true, channel: Some(ChannelAssignment::Uniform(
            KrausChannel::identity_channel(2),
        )), ..Default::default() };
        let circuit =
            build_ghz_circuit(4, GhzBasis::Z, Layout::Full, &noise, YPhase::Standard).unwrap();
        let h_count = circuit
            .elements
            .iter()
            .filter(|e| matches!(e, Element::Gate { gate, .. } if gate.name == "h"))
            .count();
        let cnot_count = circuit
            .elements
            .iter()
            .filter(|e| matches!(e, Element::Gate { gate, .. } if gate.name == "cnot"))
            .count();
        let inserts = circuit.channel_locations().len();
        let measures: usize = circuit
            .elements
            .iter()
            .map(|e| match e {
                Element::FinalMeasure { qubits, .. } => qubits.len(),
                Element::MeasureReset { .. } => 1,
                _ => 0,
            })
            .sum();
        // 1 encoding H + 4 measurement-rotation H's; 3 CNOTs; 4 channel
        // inserts; 4 measurements.
        assert_eq!(h_count, 5);
        assert_eq!(cnot_count, 3);
        assert_eq!(inserts, 4);
        assert_eq!(measures, 4);
    }

    #[test]
    fn fig2_structure() {
        let noise = GhzCircuitNoise { meas_twirl: true, channel: Some(ChannelAssignment::Uniform(
            KrausChannel::identity_channel(2),
        )), ..Default::default() };
        let circuit =
            build_ghz_circuit(4, GhzBasis::Z, Layout::TwoQubit, &noise, YPhase::Standard).unwrap();
        assert_eq!(circuit.qubit_count, 2);
        let resets = circuit
            .elements
            .iter()
            .filter(|e| matches!(e, Element::MeasureReset { .. }))
            .count();
        assert_eq!(resets, 3);
        assert_eq!(circuit.channel_locations().len(), 4);
    }

    #[test]
    fn ideal_circuit_accepts() {
        for layout in [Layout::Full, Layout::TwoQubit] {
            for basis in GhzBasis::ALL {
                let noise = GhzCircuitNoise { meas_twirl: true, ..Default::default() };
                let circuit =
                    build_ghz_circuit(4, basis, layout, &noise, YPhase::Standard).unwrap();
                let p = simulate_parity_acceptance(&circuit).unwrap();
                assert_close(p, 1.0, 1e-12);
            }
        }
    }

    #[test]
    fn two_qubit_layout_matches_transfer_product() {
        let ch = rotation_channel(0.1, [0.0, 0.0, 1.0]);
        let noise = GhzCircuitNoise {
            meas_twirl: true,
            channel: Some(ChannelAssignment::Uniform(ch.clone())),
            ..Default::default()
        };
        let circuit =
            build_ghz_circuit(4, GhzBasis::Z, Layout::TwoQubit, &noise, YPhase::Standard).unwrap();
        let p = simulate_parity_acceptance(&circuit).unwrap();
        assert_close(p, 0.4f64.cos().powi(2), 1e-12);

        // Dephasing closed form on the full layout.
        let q = 0.03;
        let noise = GhzCircuitNoise {
            meas_twirl: true,
            channel: Some(ChannelAssignment::Uniform(KrausChannel::dephasing(q).unwrap())),
            ..Default::default()
        };
        let circuit =
            build_ghz_circuit(5, GhzBasis::Z, Layout::Full, &noise, YPhase::Standard).unwrap();
        let p = simulate_parity_acceptance(&circuit).unwrap();
        assert_close(p, (1.0 + (1.0 - 2.0 * q).powi(5)) / 2.0, 1e-12);
    }

    #[test]
    fn layouts_agree_on_random_channels() {
        let mut state = 0x0123456789abcdefu64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..8 {
            let n = 2 + trial % 5;
            let channels: Vec<KrausChannel> = (0..n)
                .map(|_| {
                    KrausChannel::convex_mix(
                        &[
                            rotation_channel(0.3 * next(), [next() - 0.5, next() - 0.5, next() - 0.5]),
                            KrausChannel::amplitude_damping(0.2 * next()).unwrap(),
                        ],
                        &[0.7, 0.3],
                    )
                    .unwrap()
                })
                .collect();
            let basis = GhzBasis::ALL[trial % 3];
            let mk = |layout| {
                let noise = GhzCircuitNoise {
                    meas_twirl: true,
                    channel: Some(ChannelAssignment::PerQubit(channels.clone())),
                    ..Default::default()
                };
                let circuit =
                    build_ghz_circuit(n, basis, layout, &noise, YPhase::Standard).unwrap();
                simulate_parity_acceptance(&circuit).unwrap()
            };
            let full = mk(Layout::Full);
            let two = mk(Layout::TwoQubit);
            let refs: Vec<&KrausChannel> = channels.iter().collect();
            let transfer = ghz::accept_probability(&refs, basis, YPhase::Standard).unwrap();
            assert!((full - two).abs() < 1e-10, "layouts disagree: {full} vs {two}");
            assert!((full - transfer).abs() < 1e-10, "engines disagree: {full} vs {transfer}");
        }
    }

    #[test]
    fn exact_twirl_of_gate_noise_is_pauli() {
        let [_, _, _, z] = paulis();
        let zz = z.kronecker(&z);
        let u = identity(4) * cr(0.05f64.cos()) + zz * c(0.0, 0.05f64.sin());
        let noisy_cnot = gates::cnot(Some(KrausChannel::unitary(&u).unwrap()));
        let circuit = CircuitSpec {
            qubit_count: 2,
            elements: vec![Element::Gate { qubits: vec![0, 1], gate: noisy_cnot }],
        };
        let compiled = compile_exact_twirl(&circuit).unwrap();
        let Element::Gate { gate, .. } = &compiled.elements[0] else { panic!() };
        let tw = gate.noise.as_ref().unwrap();
        let a0 = crate::coherence::leading_kraus(tw).unwrap();
        let params = crate::coherence::coherence_params(&a0, 4).unwrap();
        match params {
            crate::coherence::CoherenceParams::Qudit(q) => assert!(q.theta < 1e-9),
            _ => panic!("4-dim decomposition expected"),
        }
    }

    #[test]
    fn sampled_frames_average_to_exact_twirl() {
        // Mean over all 16 single-gate frames of the effective noise equals
        // the exact Pauli twirl (Choi distance), on a random 2-qubit noise.
        let [_, x, y, z] = paulis();
        let h = x.kronecker(&z) * cr(0.4) + y.kronecker(&x) * cr(0.3) + z.kronecker(&y) * cr(0.2);
        let h = (&h + h.adjoint()) * cr(0.5);
        let (vals, vecs) = linalg::hermitian_eigen(&h);
        let mut e = CMat::zeros(4, 4);
        for (i, &v) in vals.iter().enumerate() {
            e[(i, i)] = c(0.0, 0.1 * v).exp();
        }
        let u = &vecs * e * vecs.adjoint();
        let noise = KrausChannel::unitary(&u).unwrap();
        let basis = pauli_basis(2);
        // Average P noise(P . P) P over all 16 frames.
        let mut kraus = Vec::new();
        for p in &basis {
            for a in noise.kraus() {
                kraus.push(p * a * p * cr(0.25));
            }
        }
        let averaged = KrausChannel::new(4, kraus).unwrap();
        let exact = pauli_twirl(&noise, 2).unwrap();
        let dist = choi_from_kraus(&averaged)
            .unwrap()
            .distance(&choi_from_kraus(&exact).unwrap());
        assert!(dist < 1e-10, "frame average vs exact twirl: {dist}");
    }

    #[test]
    fn frame_neutrality_with_noiseless_gates() {
        let noise = GhzCircuitNoise { meas_twirl: true, ..Default::default() };
        let circuit =
            build_ghz_circuit(4, GhzBasis::X, Layout::TwoQubit, &noise, YPhase::Standard).unwrap();
        let framed = compile_sampled_frames(&circuit, 16, 99).unwrap();
        for f in &framed {
            let p = simulate_parity_acceptance(f).unwrap();
            assert_close(p, 1.0, 1e-12);
        }
    }

    #[test]
    fn sampled_mean_approaches_exact() {
        // With coherent noise on the encoding Hadamards, the sampled-frame
        // mean acceptance converges to the exact-twirl acceptance.
        let gate_noise = rotation_channel(0.1, [0.0, 0.0, 1.0]);
        let noise = GhzCircuitNoise {
            sq_gate: Some(gate_noise),
            meas_twirl: true,
            ..Default::default()
        };
        let circuit =
            build_ghz_circuit(3, GhzBasis::X, Layout::TwoQubit, &noise, YPhase::Standard).unwrap();
        let exact = simulate_parity_acceptance(&compile_exact_twirl(&circuit).unwrap()).unwrap();
        let frames = compile_sampled_frames(&circuit, 256, 7).unwrap();
        let mean: f64 = frames
            .iter()
            .map(|f| simulate_parity_acceptance(f).unwrap())
            .sum::<f64>()
            / 256.0;
        // Frame-to-frame spread at theta = 0.1 is below ~0.01; 3 binomial-
        // style sigmas of the 256-frame mean stay within 0.01.
        assert!((mean - exact).abs() < 0.01, "mean {mean} vs exact {exact}");
    }

    #[test]
    fn gate_protocol_reduces_to_channel_protocol() {
        let f_noise = rotation_channel(0.02, [0.6, 0.0, 0.8]);
        let f = gates::hadamard(Some(f_noise.clone()));
        let cfg = CircuitProtocolConfig {
            n_values: vec![2, 4, 6],
            ..Default::default()
        };
        let rows = run_gate_protocol(&f, None, &cfg).unwrap();
        let exp = ghz::GhzExperiment {
            n_values: vec![2, 4, 6],
            channels: ChannelAssignment::Uniform(f_noise),
            shots: 0,
            seed: 0,
            y_phase: YPhase::Standard,
        };
        let direct = ghz::run_channel_protocol(&exp).unwrap();
        assert_eq!(rows.len(), direct.len());
        for (a, b) in rows.iter().zip(&direct) {
            assert_eq!(a.basis, b.basis);
            assert_eq!(a.n, b.n);
            assert!((a.p_error - b.p_error).abs() < 1e-10, "{} vs {}", a.p_error, b.p_error);
        }
    }

    #[test]
    fn noiseless_gate_protocol_is_error_free() {
        let f = gates::phase_s(None);
        let cfg = CircuitProtocolConfig { n_values: vec![2, 3, 4], ..Default::default() };
        let rows = run_gate_protocol(&f, None, &cfg).unwrap();
        for row in rows {
            assert_close(row.p_error, 0.0, 1e-12);
        }
    }

    #[test]
    fn measurement_protocol_ideal_and_tilted() {
        let cfg = CircuitProtocolConfig { n_values: vec![2, 4, 6, 8], ..Default::default() };
        let rows = run_measurement_protocol(&NoisyMeasurement::ideal(), &cfg).unwrap();
        for row in &rows {
            assert_close(row.p_error, 0.0, 1e-12);
        }
        // Tilted measurement U = exp(i 0.02 X): quadratic in the X basis,
        // linear-only in Y.
        let u = linalg::rotation_unitary(0.02, [1.0, 0.0, 0.0]);
        let meas = NoisyMeasurement::new(u, [1.0, 0.0]).unwrap();
        let rows = run_measurement_protocol(&meas, &cfg).unwrap();
        let x8 = rows.iter().find(|r| r.basis == GhzBasis::X && r.n == 8).unwrap();
        let y8 = rows.iter().find(|r| r.basis == GhzBasis::Y && r.n == 8).unwrap();
        // Effective per-qubit error exp(-i 0.02 X): quadratic (n^2 theta^2)
        // in the X rows, linear only (n theta^2) in the Y rows.
        let t2 = 4e-4;
        assert!((x8.p_error - 64.0 * t2).abs() < 0.1 * 64.0 * t2, "x8 = {}", x8.p_error);
        assert!((y8.p_error - 8.0 * t2).abs() < 0.1 * 8.0 * t2, "y8 = {}", y8.p_error);
    }

    #[test]
    fn serde_roundtrip_circuit() {
        let noise = GhzCircuitNoise {
            meas_twirl: true,
            channel: Some(ChannelAssignment::Uniform(rotation_channel(0.05, [1.0, 0.0, 0.0]))),
            ..Default::default()
        };
        let circuit =
            build_ghz_circuit(3, GhzBasis::Y, Layout::TwoQubit, &noise, YPhase::Standard).unwrap();
        let json = serde_json::to_string(&circuit).unwrap();
        let back: CircuitSpec = serde_json::from_str(&json).unwrap();
        let p1 = simulate_parity_acceptance(&circuit).unwrap();
        let p2 = simulate_parity_acceptance(&back).unwrap();
        assert_close(p1, p2, 1e-15);
    }

    #[test]
    fn distribution_simulation() {
        // Bell pair measured in Z: even outcomes only.
        let circuit = CircuitSpec {
            qubit_count: 2,
            elements: vec![
                Element::Gate { qubits: vec![0], gate: gates::hadamard(None) },
                Element::Gate { qubits: vec![0, 1], gate: gates::cnot(None) },
                Element::FinalMeasure {
                    qubits: vec![0, 1],
                    basis: MeasBasis::Z,
                    meas: None,
                    twirl: false,
                },
            ],
        };
        let dist = simulate_distribution(&circuit).unwrap();
        let lookup: std::collections::BTreeMap<_, _> = dist.into_iter().collect();
        assert_close(lookup[&vec![0u8, 0]], 0.5, 1e-12);
        assert_close(lookup[&vec![1u8, 1]], 0.5, 1e-12);
        assert_close(lookup[&vec![0u8, 1]], 0.0, 1e-12);
    }
}
