//! Accumulation-order analysis in general circuits: nested circuit
//! families, G(n) estimation by small-r extrapolation, per-location
//! contributions Delta_j(n), the state-preparation test with artificial
//! rotations, and the location-coherence test.

use serde::{Deserialize, Serialize};

use crate::channel::{pauli_twirl, KrausChannel};
use crate::circuit::{
    compile_exact_twirl, distribution_fidelity, fidelity_to_ideal, gates, simulate_distribution,
    simulate_parity_acceptance, CircuitSpec, Element, MeasBasis, NoisyGate, NoisyMeasurement,
    NoisyPrep,
};
use crate::error::{Error, Result};
use crate::estimator::{extract_prep_params, PrepEstimate, PrepProbabilities};
use crate::linalg::rotation_unitary;
use crate::rng;

/// A nested family of circuits: `build(n, r)` must produce circuits whose
/// gate/channel element sequences extend one another as n grows, with all
/// inserted channels scaled so their worst-case infidelity is r.
pub struct NestedFamily {
    pub name: String,
    build: Box<dyn Fn(usize, f64) -> Result<CircuitSpec> + Send + Sync>,
}

impl NestedFamily {
    pub fn new(
        name: impl Into<String>,
        build: impl Fn(usize, f64) -> Result<CircuitSpec> + Send + Sync + 'static,
    ) -> Self {
        NestedFamily { name: name.into(), build: Box::new(build) }
    }

    pub fn circuit(&self, n: usize, r: f64) -> Result<CircuitSpec> {
        (self.build)(n, r)
    }

    /// Structural prefix-consistency check on the first members starting at
    /// `base`: each circuit's non-prep element list must extend the
    /// previous one's.
    pub fn check_prefix_consistency(&self, base: usize) -> Result<()> {
        let r = 1e-6;
        for n in base..base + 2 {
            let small = self.circuit(n, r)?;
            let large = self.circuit(n + 1, r)?;
            let s: Vec<String> = element_signatures(&small);
            let l: Vec<String> = element_signatures(&large);
            if l.len() < s.len() || l[..s.len()] != s[..] {
                return Err(Error::Validation(format!(
                    "family {:?} is not prefix-consistent between n={n} and n={}",
                    self.name,
                    n + 1
                )));
            }
        }
        Ok(())
    }
}

fn element_signatures(circuit: &CircuitSpec) -> Vec<String> {
    circuit
        .elements
        .iter()
        .filter(|e| !matches!(e, Element::Prep { .. }))
        .map(|e| match e {
            Element::Gate { qubits, gate } => {
                format!("gate:{}:{:?}:{:.12e}", gate.name, qubits, gate.ideal.norm())
            }
            Element::ChannelInsert { qubit, channel } => {
                let fingerprint: f64 = channel.kraus().iter().map(|m| m.norm()).sum();
                format!("chan:{qubit}:{fingerprint:.12e}")
            }
            Element::MeasureReset { qubit, .. } => format!("mr:{qubit}"),
            Element::FinalMeasure { qubits, .. } => format!("fm:{qubits:?}"),
            Element::Prep { .. } => unreachable!(),
        })
        .collect()
}

/// G(n) estimate with its raw two-scale diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GEstimate {
    pub value: f64,
    /// (r, (1-F)/r) for the two scales used.
    pub raw: [(f64, f64); 2],
    /// False when the two-scale correction is large compared to the
    /// extrapolated value, i.e. the small-r regime is suspect.
    pub reliable: bool,
}

fn validate_scales(n: usize, r_values: [f64; 2]) -> Result<(f64, f64)> {
    let (r1, r2) = (r_values[0], r_values[1]);
    if !(r1 > 0.0 && r2 > 0.0 && r1 > r2) {
        return Err(Error::Validation("need r1 > r2 > 0".into()));
    }
    if r1 / r2 < 4.0 - 1e-12 {
        return Err(Error::Validation("scale ratio r1/r2 must be >= 4".into()));
    }
    if (n * n) as f64 * r1 >= 0.1 {
        return Err(Error::Validation(format!(
            "n^2 r = {} too large for the small-r limit (need < 0.1)",
            (n * n) as f64 * r1
        )));
    }
    Ok((r1, r2))
}

/// Estimate G(n) = lim_{r->0} (1 - F(n,r)) / r by evaluating at two scales
/// and extrapolating linearly in r to zero.
pub fn estimate_g(family: &NestedFamily, n: usize, r_values: [f64; 2]) -> Result<GEstimate> {
    let (r1, r2) = validate_scales(n, r_values)?;
    let g_at = |r: f64| -> Result<f64> {
        let circuit = family.circuit(n, r)?;
        let f = fidelity_to_ideal(&circuit)?;
        Ok((1.0 - f) / r)
    };
    let g1 = g_at(r1)?;
    let g2 = g_at(r2)?;
    Ok(richardson(r1, g1, r2, g2))
}

fn richardson(r1: f64, g1: f64, r2: f64, g2: f64) -> GEstimate {
    let g0 = (r1 * g2 - r2 * g1) / (r1 - r2);
    let correction = (g2 - g0).abs();
    let reliable = correction <= 0.25 * g0.abs().max(1e-12);
    GEstimate { value: g0, raw: [(r1, g1), (r2, g2)], reliable }
}

/// Delta_j(n) = G(n) - G^j(n), where G^j omits the j-th channel insert.
pub fn contribution_delta(
    family: &NestedFamily,
    j: usize,
    n: usize,
    r_values: [f64; 2],
) -> Result<GEstimate> {
    let (r1, r2) = validate_scales(n, r_values)?;
    let delta_at = |r: f64| -> Result<f64> {
        let full = family.circuit(n, r)?;
        let locations = full.channel_locations();
        let idx = *locations.get(j).ok_or_else(|| {
            Error::Validation(format!("location {j} out of range ({} inserts)", locations.len()))
        })?;
        let without = full.without_element(idx);
        let f_full = fidelity_to_ideal(&full)?;
        let f_without = fidelity_to_ideal(&without)?;
        Ok(((1.0 - f_full) / r) - ((1.0 - f_without) / r))
    };
    let d1 = delta_at(r1)?;
    let d2 = delta_at(r2)?;
    Ok(richardson(r1, d1, r2, d2))
}

/// Log-log least-squares slope of |values| against n, with its standard
/// error. Values at or below `floor` are clamped to the floor so constant
/// (order-0) data stays finite.
pub fn fit_order(n_values: &[usize], values: &[f64], floor: f64) -> Result<(f64, f64)> {
    if n_values.len() != values.len() || n_values.len() < 3 {
        return Err(Error::Fit("order fit needs >= 3 points".into()));
    }
    let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|&v| v.abs().max(floor).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let dof = (n - 2.0).max(1.0);
    let stderr = (rss / dof / sxx).sqrt();
    Ok((slope, stderr))
}

/// Per-location contribution report: G, G^j, Delta_j over an n grid and the
/// fitted order of Delta_j(n).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContributionReport {
    pub n_values: Vec<usize>,
    pub g: Vec<f64>,
    pub g_j: Vec<f64>,
    pub delta: Vec<f64>,
    pub fitted_order: f64,
    pub order_stderr: f64,
}

/// Evaluate G and Delta_j over an n grid, choosing r small enough per n
/// (r1 = margin / n^2, r2 = r1 / 4), and fit the order of Delta_j(n).
pub fn contribution_report(
    family: &NestedFamily,
    j: usize,
    n_values: &[usize],
) -> Result<ContributionReport> {
    family.check_prefix_consistency(*n_values.first().unwrap_or(&2))?;
    let mut g = Vec::new();
    let mut g_j = Vec::new();
    let mut delta = Vec::new();
    for &n in n_values {
        let r1 = 0.05 / ((n * n) as f64);
        let rs = [r1, r1 / 4.0];
        let gn = estimate_g(family, n, rs)?;
        let dn = contribution_delta(family, j, n, rs)?;
        g.push(gn.value);
        g_j.push(gn.value - dn.value);
        delta.push(dn.value);
    }
    let (fitted_order, order_stderr) = fit_order(n_values, &delta, 1e-9)?;
    Ok(ContributionReport {
        n_values: n_values.to_vec(),
        g,
        g_j,
        delta,
        fitted_order,
        order_stderr,
    })
}

/// 1-qubit family: prepare |0>, then n noisy wait locations. Each location
/// carries a rotation channel about `axis` with worst-case infidelity r
/// (theta = asin sqrt r); `twirled_location` replaces that one location's
/// channel by its Pauli twirl.
pub fn rotation_sequence_family(axis: [f64; 3], twirled_location: Option<usize>) -> NestedFamily {
    NestedFamily::new("rotation-sequence", move |n, r| {
        let theta = r.sqrt().asin();
        let coherent = KrausChannel::rotation(theta, axis)?;
        let twirled = pauli_twirl(&coherent, 1)?;
        let mut elements = vec![Element::Prep { qubit: 0, prep: None, twirl: false }];
        for q in 0..n {
            let channel =
                if Some(q) == twirled_location { twirled.clone() } else { coherent.clone() };
            elements.push(Element::ChannelInsert { qubit: 0, channel });
        }
        Ok(CircuitSpec { qubit_count: 1, elements })
    })
}

/// 1-qubit family with dephasing channels (q = r) at each location.
pub fn dephasing_sequence_family() -> NestedFamily {
    NestedFamily::new("dephasing-sequence", move |n, r| {
        let channel = KrausChannel::dephasing(r)?;
        let mut elements = vec![
            Element::Prep { qubit: 0, prep: None, twirl: false },
            Element::Gate { qubits: vec![0], gate: gates::hadamard(None) },
        ];
        for _ in 0..n {
            elements.push(Element::ChannelInsert { qubit: 0, channel: channel.clone() });
        }
        Ok(CircuitSpec { qubit_count: 1, elements })
    })
}

/// GHZ growth family: an EPR pair extended by one CNOT per step, with a
/// rotation channel (worst-case infidelity r) inserted on each qubit right
/// after its last entangling gate. `n` is the family step; the circuit has
/// n + 2 qubits and n + 1 channel locations.
pub fn ghz_family(axis: [f64; 3]) -> NestedFamily {
    NestedFamily::new("ghz-growth", move |n, r| {
        let qubits = n + 2;
        if qubits > 10 {
            return Err(Error::SizeCap { size: qubits, cap: 10 });
        }
        let theta = r.sqrt().asin();
        let channel = KrausChannel::rotation(theta, axis)?;
        let mut elements = Vec::new();
        for q in 0..qubits {
            elements.push(Element::Prep { qubit: q, prep: None, twirl: false });
        }
        elements.push(Element::Gate { qubits: vec![0], gate: gates::hadamard(None) });
        elements.push(Element::Gate { qubits: vec![0, 1], gate: gates::cnot(None) });
        elements.push(Element::ChannelInsert { qubit: 0, channel: channel.clone() });
        for step in 1..=n {
            elements.push(Element::Gate {
                qubits: vec![step, step + 1],
                gate: gates::cnot(None),
            });
            elements.push(Element::ChannelInsert { qubit: step, channel: channel.clone() });
        }
        Ok(CircuitSpec { qubit_count: qubits, elements })
    })
}

/// Configuration of the state-preparation protocol.
#[derive(Debug, Clone)]
pub struct PrepProtocolConfig {
    /// Number of artificial-rotation steps in the long circuits.
    pub n: usize,
    /// Artificial rotation angle per step.
    pub phi: f64,
    pub prep: NoisyPrep,
    pub meas: NoisyMeasurement,
    /// 0 = exact probabilities.
    pub shots: u64,
    pub seed: u64,
}

impl PrepProtocolConfig {
    pub fn validate(&self) -> Result<Vec<String>> {
        let nphi = self.n as f64 * self.phi;
        if nphi >= 1.0 {
            return Err(Error::Validation(format!(
                "n*phi = {nphi} must stay well below 1 (hard limit 1.0)"
            )));
        }
        let mut warnings = Vec::new();
        if nphi > 0.5 {
            warnings.push(format!("n*phi = {nphi} above the 0.5 warning threshold"));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepReport {
    pub probabilities: PrepProbabilities,
    pub estimate: PrepEstimate,
}

fn prep_circuit(
    steps: usize,
    axis: [f64; 3],
    phi: f64,
    prep: &NoisyPrep,
    meas: &NoisyMeasurement,
    twirl_prep: bool,
) -> Result<CircuitSpec> {
    let mut elements =
        vec![Element::Prep { qubit: 0, prep: Some(prep.clone()), twirl: twirl_prep }];
    for _ in 0..steps {
        // Artificial rotations are n separate small rotations, not one
        // rotation by n*phi.
        elements.push(Element::Gate {
            qubits: vec![0],
            gate: NoisyGate::new("artificial_rotation", rotation_unitary(phi, axis), None, false)?,
        });
    }
    elements.push(Element::FinalMeasure {
        qubits: vec![0],
        basis: MeasBasis::Z,
        meas: Some(meas.clone()),
        twirl: true,
    });
    Ok(CircuitSpec { qubit_count: 1, elements })
}

/// Run the state-preparation protocol: six single-qubit circuits (twirled /
/// untwirled prep, n = 0 and n rotation steps about X and Y), measurement
/// always I/Z-twirled, followed by the extraction formulas.
pub fn run_prep_protocol(cfg: &PrepProtocolConfig) -> Result<PrepReport> {
    cfg.validate()?;
    let x_axis = [1.0, 0.0, 0.0];
    let y_axis = [0.0, 1.0, 0.0];
    let prob = |steps: usize, axis: [f64; 3], twirl_prep: bool, tag: &str| -> Result<f64> {
        let circuit = prep_circuit(steps, axis, cfg.phi, &cfg.prep, &cfg.meas, twirl_prep)?;
        let compiled = compile_exact_twirl(&circuit)?;
        let p = simulate_parity_acceptance(&compiled)?;
        if cfg.shots == 0 {
            return Ok(p);
        }
        let mut stream = rng::derive_stream(cfg.seed, &["prep-protocol", tag], &[steps as u64]);
        let zeros = cfg.shots - rng::binomial(&mut stream, cfg.shots, 1.0 - p);
        Ok(zeros as f64 / cfg.shots as f64)
    };
    let probabilities = PrepProbabilities {
        p0_twirled: prob(0, x_axis, true, "p0t")?,
        p0: prob(0, x_axis, false, "p0")?,
        pn_twirled_x: prob(cfg.n, x_axis, true, "pnt_x")?,
        pn_x: prob(cfg.n, x_axis, false, "pn_x")?,
        pn_twirled_y: prob(cfg.n, y_axis, true, "pnt_y")?,
        pn_y: prob(cfg.n, y_axis, false, "pn_y")?,
    };
    let estimate = extract_prep_params(&probabilities, cfg.n, cfg.phi)?;
    Ok(PrepReport { probabilities, estimate })
}

/// Result of the location-coherence test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationReport {
    pub f_baseline: f64,
    pub f_j: f64,
    pub f_plain: f64,
    pub delta_f: f64,
    pub threshold: f64,
    pub coherent_contribution: bool,
}

fn set_twirl_marks(circuit: &CircuitSpec, marked: &[usize]) -> Result<CircuitSpec> {
    let mut elements = Vec::with_capacity(circuit.elements.len());
    for (i, el) in circuit.elements.iter().enumerate() {
        let on = marked.contains(&i);
        let next = match el {
            Element::Gate { qubits, gate } => Element::Gate {
                qubits: qubits.clone(),
                gate: NoisyGate { twirlable: on, ..gate.clone() },
            },
            Element::Prep { qubit, prep, .. } => {
                Element::Prep { qubit: *qubit, prep: prep.clone(), twirl: on }
            }
            Element::MeasureReset { qubit, basis, meas, .. } => Element::MeasureReset {
                qubit: *qubit,
                basis: *basis,
                meas: meas.clone(),
                twirl: on,
            },
            Element::FinalMeasure { qubits, basis, meas, .. } => Element::FinalMeasure {
                qubits: qubits.clone(),
                basis: *basis,
                meas: meas.clone(),
                twirl: on,
            },
            Element::ChannelInsert { .. } if on => {
                return Err(Error::Unsupported(
                    "channel inserts are never twirled; mark gates, preps, or measurements".into(),
                ))
            }
            other => other.clone(),
        };
        elements.push(next);
    }
    Ok(CircuitSpec { qubit_count: circuit.qubit_count, elements })
}

/// Identify whether errors at element `j` add coherently with the other
/// suspect locations `t` by comparing output distributions of four twirl
/// variants. The verdict threshold is kappa * (1 - F^{j,T}).
pub fn location_coherence_test(
    circuit: &CircuitSpec,
    j: usize,
    t: &[usize],
    kappa: f64,
) -> Result<LocationReport> {
    if !t.contains(&j) {
        return Err(Error::Validation("location j must belong to the suspect set T".into()));
    }
    let dist = |marks: &[usize]| -> Result<Vec<(Vec<u8>, f64)>> {
        let marked = set_twirl_marks(circuit, marks)?;
        let compiled = compile_exact_twirl(&marked)?;
        simulate_distribution(&compiled)
    };
    let x_jt = dist(t)?;
    let t_minus_j: Vec<usize> = t.iter().copied().filter(|&i| i != j).collect();
    let x_t = dist(&t_minus_j)?;
    let x_j = dist(&[j])?;
    let x_plain = dist(&[])?;
    let f_baseline = distribution_fidelity(&x_t, &x_jt);
    let f_j = distribution_fidelity(&x_j, &x_t);
    let f_plain = distribution_fidelity(&x_plain, &x_t);
    let delta_f = f_j - f_plain;
    let threshold = kappa * (1.0 - f_baseline);
    // The floor keeps roundoff-sized delta_f from triggering on noiseless
    // circuits where 1 - F^{j,T} is itself zero.
    let coherent_contribution = delta_f > threshold.max(1e-12);
    Ok(LocationReport { f_baseline, f_j, f_plain, delta_f, threshold, coherent_contribution })
}
