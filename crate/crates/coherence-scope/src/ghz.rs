//! Exact and sampled simulation of the GHZ parity protocol for qubit
//! channels.
//!
//! The acceptance probability of the single-qubit parity measurement on a
//! GHZ state is computed with an O(n) transfer product over per-qubit trace
//! tables; a full density-matrix brute force serves as the oracle for n up
//! to 10.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::KrausChannel;
use crate::coherence::QubitCoherence;
use crate::error::{Error, Result};
use crate::linalg::{c, cr, paulis, CMat, CVec};
use crate::rng;

/// GHZ basis label: the Pauli whose eigenstates build the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GhzBasis {
    X,
    Y,
    Z,
}

impl GhzBasis {
    pub const ALL: [GhzBasis; 3] = [GhzBasis::X, GhzBasis::Y, GhzBasis::Z];

    pub fn label(&self) -> &'static str {
        match self {
            GhzBasis::X => "X",
            GhzBasis::Y => "Y",
            GhzBasis::Z => "Z",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "X" => Ok(GhzBasis::X),
            "Y" => Ok(GhzBasis::Y),
            "Z" => Ok(GhzBasis::Z),
            _ => Err(Error::Validation(format!("unknown basis label {s:?}"))),
        }
    }

    /// Pauli index (0 = X, 1 = Y, 2 = Z) into axis vectors.
    pub fn axis_index(&self) -> usize {
        match self {
            GhzBasis::X => 0,
            GhzBasis::Y => 1,
            GhzBasis::Z => 2,
        }
    }
}

/// Relative-phase convention for the Y-basis states. `Standard` is
/// |1_Y> = (|0> - i|1>)/sqrt(2), measured in the Z basis; `Alternate` is
/// |1_Y> = (i|0> + |1>)/sqrt(2), which moves the parity measurement to the
/// X basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YPhase {
    #[default]
    Standard,
    Alternate,
}

/// Basis kets (|0_P>, |1_P>) for the chosen convention.
pub fn basis_states(basis: GhzBasis, y_phase: YPhase) -> (CVec, CVec) {
    let s = 1.0 / 2.0f64.sqrt();
    match basis {
        GhzBasis::Z => (
            CVec::from_vec(vec![cr(1.0), cr(0.0)]),
            CVec::from_vec(vec![cr(0.0), cr(1.0)]),
        ),
        GhzBasis::X => (
            CVec::from_vec(vec![cr(s), cr(s)]),
            CVec::from_vec(vec![cr(s), cr(-s)]),
        ),
        GhzBasis::Y => match y_phase {
            YPhase::Standard => (
                CVec::from_vec(vec![cr(s), c(0.0, s)]),
                CVec::from_vec(vec![cr(s), c(0.0, -s)]),
            ),
            YPhase::Alternate => (
                CVec::from_vec(vec![cr(s), c(0.0, s)]),
                CVec::from_vec(vec![c(0.0, s), cr(s)]),
            ),
        },
    }
}

/// Single-qubit operator whose tensor-power parity is measured: X for the
/// Z-basis state, Z for the X- and (standard) Y-basis states.
pub fn parity_operator(basis: GhzBasis, y_phase: YPhase) -> CMat {
    let [_, x, _, z] = paulis();
    match (basis, y_phase) {
        (GhzBasis::Z, _) => x,
        (GhzBasis::X, _) => z,
        (GhzBasis::Y, YPhase::Standard) => z,
        (GhzBasis::Y, YPhase::Alternate) => x,
    }
}

fn check_channels(channels: &[&KrausChannel]) -> Result<()> {
    if channels.len() < 2 {
        return Err(Error::Validation("GHZ protocol needs n >= 2".into()));
    }
    for ch in channels {
        if ch.dim() != 2 {
            return Err(Error::Dimension("GHZ engine requires qubit channels".into()));
        }
    }
    Ok(())
}

/// Acceptance probability (even parity) of the GHZ parity measurement,
/// computed by the O(n) transfer product
/// p = 1/4 sum_{a,b} [prod_j tr C_j(|a><b|) + prod_j tr(M C_j(|a><b|))].
pub fn accept_probability(
    channels: &[&KrausChannel],
    basis: GhzBasis,
    y_phase: YPhase,
) -> Result<f64> {
    check_channels(channels)?;
    let (s0, s1) = basis_states(basis, y_phase);
    let m = parity_operator(basis, y_phase);
    let states = [s0, s1];
    let mut total = Complex64::ZERO;
    for a in 0..2 {
        for b in 0..2 {
            let ket_bra = &states[a] * states[b].adjoint();
            let mut prod_t = cr(1.0);
            let mut prod_m = cr(1.0);
            for ch in channels {
                let sigma = ch.apply(&ket_bra);
                prod_t *= sigma.trace();
                prod_m *= (&m * sigma).trace();
            }
            total += prod_t + prod_m;
        }
    }
    let p = total / cr(4.0);
    if p.im.abs() > 1e-9 {
        return Err(Error::Consistency(format!(
            "acceptance probability has imaginary part {:.3e}",
            p.im
        )));
    }
    clamp_probability(p.re)
}

/// Brute-force oracle: builds the full 2^n density matrix, applies each
/// channel, and projects on the even-parity subspace. Refuses n > 10.
pub fn accept_probability_bruteforce(
    channels: &[&KrausChannel],
    basis: GhzBasis,
    y_phase: YPhase,
) -> Result<f64> {
    check_channels(channels)?;
    let n = channels.len();
    if n > 10 {
        return Err(Error::SizeCap { size: n, cap: 10 });
    }
    let rho = ghz_density(n, basis, y_phase);
    let mut out = rho;
    for (j, ch) in channels.iter().enumerate() {
        out = ch.apply_at(&out, j, n)?;
    }
    let m = parity_operator(basis, y_phase);
    // tr(Pi rho') with Pi = (I + M^n)/2, using the product structure of M^n.
    let dim = 1usize << n;
    let mut m_term = Complex64::ZERO;
    for i in 0..dim {
        for j in 0..dim {
            let mut elem = cr(1.0);
            for q in 0..n {
                let bi = (i >> (n - 1 - q)) & 1;
                let bj = (j >> (n - 1 - q)) & 1;
                elem *= m[(bi, bj)];
                if elem == Complex64::ZERO {
                    break;
                }
            }
            if elem != Complex64::ZERO {
                m_term += elem * out[(j, i)];
            }
        }
    }
    let p = (out.trace() + m_term) / cr(2.0);
    if p.im.abs() > 1e-9 {
        return Err(Error::Consistency(format!(
            "brute-force acceptance has imaginary part {:.3e}",
            p.im
        )));
    }
    clamp_probability(p.re)
}

/// Full GHZ density matrix (|0_P..0_P> + |1_P..1_P>)(..)'/2.
pub fn ghz_density(n: usize, basis: GhzBasis, y_phase: YPhase) -> CMat {
    let (s0, s1) = basis_states(basis, y_phase);
    let dim = 1usize << n;
    let mut psi = CVec::zeros(dim);
    for i in 0..dim {
        let mut amp0 = cr(1.0);
        let mut amp1 = cr(1.0);
        for q in 0..n {
            let bit = (i >> (n - 1 - q)) & 1;
            amp0 *= s0[bit];
            amp1 *= s1[bit];
        }
        psi[i] = (amp0 + amp1) / cr(2.0f64.sqrt());
    }
    &psi * psi.adjoint()
}

/// Fidelity of the channel output to the ideal GHZ state (the state
/// projector, as opposed to the parity projector), via a 16-term transfer
/// product.
pub fn ghz_state_fidelity(
    channels: &[&KrausChannel],
    basis: GhzBasis,
    y_phase: YPhase,
) -> Result<f64> {
    check_channels(channels)?;
    let (s0, s1) = basis_states(basis, y_phase);
    let states = [s0, s1];
    let mut total = Complex64::ZERO;
    for a in 0..2 {
        for b in 0..2 {
            for ap in 0..2 {
                for bp in 0..2 {
                    let ket_bra = &states[ap] * states[bp].adjoint();
                    let mut prod = cr(1.0);
                    for ch in channels {
                        let sigma = ch.apply(&ket_bra);
                        prod *= (states[a].adjoint() * &sigma * &states[b])[(0, 0)];
                    }
                    total += prod;
                }
            }
        }
    }
    let f = total / cr(4.0);
    if f.im.abs() > 1e-9 {
        return Err(Error::Consistency(format!(
            "state fidelity has imaginary part {:.3e}",
            f.im
        )));
    }
    clamp_probability(f.re)
}

fn clamp_probability(p: f64) -> Result<f64> {
    if p < -1e-9 || p > 1.0 + 1e-9 {
        return Err(Error::Consistency(format!("probability {p} outside [0, 1]")));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Leading-order infidelity of the state projector (Thm.-2 form):
/// 2np + n(1 - v_P^2) theta^2 + n^2 theta^2 v_P^2.
pub fn predicted_infidelity(params: &QubitCoherence, basis: GhzBasis, n: usize) -> f64 {
    let nf = n as f64;
    let vp2 = params.v(basis.axis_index()).powi(2);
    let t2 = params.theta * params.theta;
    2.0 * nf * params.p + nf * (1.0 - vp2) * t2 + nf * nf * t2 * vp2
}

/// Leading-order error of the single-qubit parity measurement:
/// 2np + n theta^2 (1 - v_P^2 - v_P'^2) + n^2 theta^2 v_P^2, with P' the
/// Pauli that flips the basis states (X for P = Z; Z for P in {X, Y}).
pub fn predicted_error_singlequbit_meas(
    params: &QubitCoherence,
    basis: GhzBasis,
    n: usize,
) -> f64 {
    let nf = n as f64;
    let vp2 = params.v(basis.axis_index()).powi(2);
    let vpp2 = match basis {
        GhzBasis::Z => params.v(0).powi(2),
        GhzBasis::X | GhzBasis::Y => params.v(2).powi(2),
    };
    let t2 = params.theta * params.theta;
    2.0 * nf * params.p + nf * t2 * (1.0 - vp2 - vpp2) + nf * nf * t2 * vp2
}

/// Channels for the n qubits of one GHZ state: one channel reused on every
/// qubit, or an explicit per-qubit list (a prefix is taken for smaller n).
#[derive(Debug, Clone)]
pub enum ChannelAssignment {
    Uniform(KrausChannel),
    PerQubit(Vec<KrausChannel>),
}

impl ChannelAssignment {
    pub fn for_n(&self, n: usize) -> Result<Vec<&KrausChannel>> {
        match self {
            ChannelAssignment::Uniform(ch) => Ok(vec![ch; n]),
            ChannelAssignment::PerQubit(list) => {
                if list.len() < n {
                    return Err(Error::Validation(format!(
                        "per-qubit channel list has {} entries, need {n}",
                        list.len()
                    )));
                }
                Ok(list[..n].iter().collect())
            }
        }
    }
}

/// Configuration and result types of a Protocol-1-style run.
#[derive(Debug, Clone)]
pub struct GhzExperiment {
    pub n_values: Vec<usize>,
    pub channels: ChannelAssignment,
    /// 0 means exact probabilities.
    pub shots: u64,
    pub seed: u64,
    pub y_phase: YPhase,
}

impl GhzExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() {
            return Err(Error::Validation("n_values must be nonempty".into()));
        }
        if self.n_values[0] < 2 {
            return Err(Error::Validation("n_values must start at n >= 2".into()));
        }
        if !self.n_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("n_values must be strictly increasing".into()));
        }
        let max_n = *self.n_values.last().unwrap();
        self.channels.for_n(max_n)?;
        Ok(())
    }
}

/// One measured (or exactly computed) error rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhzResultRow {
    pub basis: GhzBasis,
    pub n: usize,
    pub shots: u64,
    pub error_count: Option<u64>,
    pub p_error: f64,
    pub stderr: f64,
}

impl GhzResultRow {
    pub fn csv_header() -> &'static str {
        "basis,n,shots,error_count,p_error,stderr"
    }

    pub fn to_csv(&self) -> String {
        let count = self.error_count.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.basis.label(),
            self.n,
            self.shots,
            count,
            self.p_error,
            self.stderr
        )
    }
}

/// Binomial sampling of an error count, reproducible per stream.
pub fn sample_shots(p_error: f64, shots: u64, rng: &mut rand_chacha::ChaCha12Rng) -> u64 {
    rng::binomial(rng, shots, p_error)
}

/// Binomial standard error with a half-count regularizer so exact-zero
/// counts keep a finite weight.
pub fn binomial_stderr(count: u64, shots: u64) -> f64 {
    if shots == 0 {
        return 0.0;
    }
    let p = (count as f64 + 0.5) / (shots as f64 + 1.0);
    (p * (1.0 - p) / shots as f64).sqrt()
}

/// Run the channel protocol over all three bases. Error = odd parity;
/// rows are ordered by (basis, n) with bases in X, Y, Z order.
pub fn run_channel_protocol(exp: &GhzExperiment) -> Result<Vec<GhzResultRow>> {
    exp.validate()?;
    let mut rows = Vec::new();
    for basis in GhzBasis::ALL {
        for &n in &exp.n_values {
            let channels = exp.channels.for_n(n)?;
            let accept = accept_probability(&channels, basis, exp.y_phase)?;
            let p_exact = (1.0 - accept).clamp(0.0, 1.0);
            let row = if exp.shots > 0 {
                let mut stream =
                    rng::derive_stream(exp.seed, &["channel-protocol", basis.label()], &[n as u64]);
                let count = sample_shots(p_exact, exp.shots, &mut stream);
                GhzResultRow {
                    basis,
                    n,
                    shots: exp.shots,
                    error_count: Some(count),
                    p_error: count as f64 / exp.shots as f64,
                    stderr: binomial_stderr(count, exp.shots),
                }
            } else {
                GhzResultRow { basis, n, shots: 0, error_count: None, p_error: p_exact, stderr: 0.0 }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::KrausChannel;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn uniform(ch: &KrausChannel, n: usize) -> Vec<&KrausChannel> {
        vec![ch; n]
    }

    #[test]
    fn identity_accepts_everywhere() {
        let id = KrausChannel::identity_channel(2);
        for basis in GhzBasis::ALL {
            for n in [2, 3, 5, 8] {
                let p = accept_probability(&uniform(&id, n), basis, YPhase::Standard).unwrap();
                assert_close(p, 1.0, 1e-12);
            }
        }
    }

    #[test]
    fn rotation_z_closed_form() {
        for theta in [0.01, 0.1, 0.3] {
            let ch = KrausChannel::rotation(theta, [0.0, 0.0, 1.0]).unwrap();
            for n in 2..=20 {
                let p = accept_probability(&uniform(&ch, n), GhzBasis::Z, YPhase::Standard).unwrap();
                let expected = (n as f64 * theta).cos().powi(2);
                assert_close(p, expected, 1e-12);
            }
        }
    }

    #[test]
    fn dephasing_closed_form() {
        let q: f64 = 0.05;
        let ch = KrausChannel::dephasing(q).unwrap();
        for n in 2..=12 {
            let p = accept_probability(&uniform(&ch, n), GhzBasis::Z, YPhase::Standard).unwrap();
            let expected = (1.0 + (1.0 - 2.0 * q).powi(n as i32)) / 2.0;
            assert_close(p, expected, 1e-12);
            // Dephasing commutes with the X/Y-state parity checks.
            let px = accept_probability(&uniform(&ch, n), GhzBasis::X, YPhase::Standard).unwrap();
            assert_close(px, 1.0, 1e-12);
        }
    }

    #[test]
    fn transfer_matches_bruteforce_mixed_channels() {
        let mut state = 0x243f6a8885a308d3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..12 {
            let n = 2 + trial % 5;
            let channels: Vec<KrausChannel> = (0..n)
                .map(|_| {
                    KrausChannel::convex_mix(
                        &[
                            KrausChannel::rotation(
                                0.3 * next(),
                                [next() - 0.5, next() - 0.5, next() - 0.5],
                            )
                            .unwrap(),
                            KrausChannel::depolarizing(0.3 * next()).unwrap(),
                            KrausChannel::amplitude_damping(0.3 * next()).unwrap(),
                        ],
                        &[0.5, 0.25, 0.25],
                    )
                    .unwrap()
                })
                .collect();
            let refs: Vec<&KrausChannel> = channels.iter().collect();
            for basis in GhzBasis::ALL {
                let fast = accept_probability(&refs, basis, YPhase::Standard).unwrap();
                let slow = accept_probability_bruteforce(&refs, basis, YPhase::Standard).unwrap();
                assert!((fast - slow).abs() < 1e-10, "basis {basis:?} n {n}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn bruteforce_closed_form_and_cap() {
        let ch = KrausChannel::rotation(0.3, [0.0, 0.0, 1.0]).unwrap();
        let p = accept_probability_bruteforce(&uniform(&ch, 4), GhzBasis::Z, YPhase::Standard)
            .unwrap();
        assert_close(p, 1.2f64.cos().powi(2), 1e-12);
        let id = KrausChannel::identity_channel(2);
        assert!(accept_probability_bruteforce(&uniform(&id, 11), GhzBasis::Z, YPhase::Standard)
            .is_err());
    }

    #[test]
    fn permutation_invariance() {
        let a = KrausChannel::rotation(0.1, [1.0, 0.0, 0.0]).unwrap();
        let b = KrausChannel::dephasing(0.02).unwrap();
        let cch = KrausChannel::amplitude_damping(0.05).unwrap();
        let orders: [[&KrausChannel; 3]; 3] = [[&a, &b, &cch], [&cch, &a, &b], [&b, &cch, &a]];
        for basis in GhzBasis::ALL {
            let ps: Vec<f64> = orders
                .iter()
                .map(|o| accept_probability(&o.to_vec(), basis, YPhase::Standard).unwrap())
                .collect();
            assert_close(ps[0], ps[1], 1e-12);
            assert_close(ps[0], ps[2], 1e-12);
        }
    }

    #[test]
    fn alternate_y_convention_measures_x_parity() {
        // The ideal alternate-convention Y state must accept with
        // probability 1 in its own measurement basis, including odd n.
        let id = KrausChannel::identity_channel(2);
        for n in [2, 3, 4, 5] {
            let p = accept_probability(&uniform(&id, n), GhzBasis::Y, YPhase::Alternate).unwrap();
            assert_close(p, 1.0, 1e-12);
            let pb =
                accept_probability_bruteforce(&uniform(&id, n), GhzBasis::Y, YPhase::Alternate)
                    .unwrap();
            assert_close(pb, 1.0, 1e-12);
        }
    }

    #[test]
    fn predicted_formulas() {
        let mk = |theta: f64, axis: [f64; 3], p: f64| QubitCoherence {
            theta,
            axis,
            p,
            delta: 0.0,
            w: [0.0, 0.0, 1.0],
        };
        // Stochastic-only.
        let params = mk(0.0, [0.0, 0.0, 1.0], 0.001);
        assert_close(predicted_infidelity(&params, GhzBasis::Z, 10), 0.02, 1e-15);
        // Aligned axis: quadratic term dominates.
        let params = mk(0.02, [0.0, 0.0, 1.0], 0.0);
        assert_close(predicted_infidelity(&params, GhzBasis::Z, 10), 0.04, 1e-12);
        // Orthogonal axis: only the linear term.
        let params = mk(0.02, [1.0, 0.0, 0.0], 0.0);
        assert_close(predicted_infidelity(&params, GhzBasis::Z, 10), 0.004, 1e-12);

        // Single-qubit measurement variant.
        let params = mk(0.02, [0.0, 0.0, 1.0], 0.0);
        assert_close(predicted_error_singlequbit_meas(&params, GhzBasis::Z, 10), 0.04, 1e-12);
        let params = mk(0.02, [1.0, 0.0, 0.0], 0.0);
        assert_close(predicted_error_singlequbit_meas(&params, GhzBasis::Z, 10), 0.0, 1e-15);
        let params = mk(0.0, [0.0, 0.0, 1.0], 0.001);
        assert_close(predicted_error_singlequbit_meas(&params, GhzBasis::X, 5), 0.01, 1e-15);
    }

    #[test]
    fn state_fidelity_matches_unitary_overlap() {
        // For a unitary channel, F = |<psi| U^n |psi>|^2 exactly.
        let theta = 0.05;
        let ch = KrausChannel::rotation(theta, [0.0, 0.0, 1.0]).unwrap();
        for n in [2usize, 4, 6] {
            let f = ghz_state_fidelity(&uniform(&ch, n), GhzBasis::Z, YPhase::Standard).unwrap();
            assert_close(f, (n as f64 * theta).cos().powi(2), 1e-12);
            // Basis X: <psi_X| U^n |psi_X> = cos^n(theta) + (i sin theta)^n
            // exactly (the second term is the n=2 Bell-state transient).
            let fx = ghz_state_fidelity(&uniform(&ch, n), GhzBasis::X, YPhase::Standard).unwrap();
            let amp = c(theta.cos(), 0.0).powu(n as u32)
                + c(0.0, theta.sin()).powu(n as u32);
            assert_close(fx, amp.norm_sqr(), 1e-12);
        }
    }

    #[test]
    fn sampling_moments_and_edges() {
        let mut stream = rng::derive_stream(1234, &["test"], &[]);
        assert_eq!(sample_shots(0.0, 500, &mut stream), 0);
        assert_eq!(sample_shots(1.0, 100, &mut stream), 100);
        let shots = 1_000_000u64;
        let count = sample_shots(0.1, shots, &mut stream);
        // 5 sigma = 5 * sqrt(1e6 * 0.1 * 0.9) = 1500.
        assert!((count as f64 - 100_000.0).abs() < 1500.0, "count = {count}");
    }

    #[test]
    fn protocol_rows_ordered_and_exact() {
        let exp = GhzExperiment {
            n_values: (2..=8).collect(),
            channels: ChannelAssignment::Uniform(
                KrausChannel::rotation(0.02, [0.0, 0.0, 1.0]).unwrap(),
            ),
            shots: 0,
            seed: 0,
            y_phase: YPhase::Standard,
        };
        let rows = run_channel_protocol(&exp).unwrap();
        assert_eq!(rows.len(), 21);
        assert_eq!(rows[0].basis, GhzBasis::X);
        assert_eq!(rows[0].n, 2);
        assert_eq!(rows[20].basis, GhzBasis::Z);
        // Z-basis rows follow sin^2(n theta).
        for row in rows.iter().filter(|r| r.basis == GhzBasis::Z) {
            assert_close(row.p_error, (row.n as f64 * 0.02).sin().powi(2), 1e-12);
        }
        // X/Y rows stay at the linear-in-n scale: well below the Z signal.
        for row in rows.iter().filter(|r| r.basis != GhzBasis::Z) {
            assert!(row.p_error < 0.02 * 0.02 * row.n as f64 * 1.01);
        }
    }

    #[test]
    fn per_qubit_variation_mean_coefficient() {
        // Per-qubit angles/axes close to a common value: the quadratic
        // coefficient follows the squared mean of theta_j v_{P,j}.
        let mut state = 0xfeedface12345678u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let n_max = 10;
        let mut channels = Vec::new();
        let mut tv_z = Vec::new();
        for _ in 0..n_max {
            let theta = 0.02 * (1.0 + 0.1 * (2.0 * next() - 1.0));
            let mut axis = [
                0.1 * (2.0 * next() - 1.0),
                0.1 * (2.0 * next() - 1.0),
                1.0 + 0.1 * (2.0 * next() - 1.0),
            ];
            let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            axis = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
            tv_z.push(theta * axis[2]);
            channels.push(KrausChannel::rotation(theta, axis).unwrap());
        }
        let refs: Vec<&KrausChannel> = channels.iter().collect();
        // Fit the quadratic coefficient over the n grid; per-qubit
        // fluctuations average out in the fit.
        let points: Vec<(usize, f64, f64)> = (3..=n_max)
            .map(|n| {
                let p =
                    1.0 - accept_probability(&refs[..n], GhzBasis::Z, YPhase::Standard).unwrap();
                (n, p, 0.0)
            })
            .collect();
        let fit = crate::estimator::wls_quadratic_fit(&points).unwrap();
        let mean: f64 = tv_z.iter().sum::<f64>() / n_max as f64;
        let expected = mean * mean;
        assert!(
            (fit.a - expected).abs() <= 0.1 * expected,
            "a = {}, (mean theta v)^2 = {expected}",
            fit.a
        );
    }
}
