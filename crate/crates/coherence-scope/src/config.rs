//! JSON experiment configurations for the command-line runner.

use serde::{Deserialize, Serialize};

use crate::channel::{worst_case_infidelity, ChannelSpec, KrausChannel};
use crate::circuit::{
    CircuitSpec, GhzCircuitNoise, Layout, NoisyGate, NoisyMeasurement, NoisyPrep, TwirlMode,
};
use crate::error::{Error, Result};
use crate::ghz::YPhase;
use crate::linalg::{c, cr, identity, paulis, rotation_unitary, CMat};
use crate::qudit::{heisenberg_weyl, is_prime};

fn default_kappa() -> f64 {
    5.0
}

/// A unitary given either as a Bloch rotation or an explicit matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnitarySpec {
    Rotation { theta: f64, axis: [f64; 3] },
    Matrix { matrix: Vec<Vec<[f64; 2]>> },
}

impl UnitarySpec {
    pub fn build(&self) -> Result<CMat> {
        match self {
            UnitarySpec::Rotation { theta, axis } => {
                let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                if norm <= 0.0 {
                    return Err(Error::Validation("rotation axis must be nonzero".into()));
                }
                Ok(rotation_unitary(*theta, [axis[0] / norm, axis[1] / norm, axis[2] / norm]))
            }
            UnitarySpec::Matrix { matrix } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Validation("unitary matrix must be square".into()));
                }
                let mut m = CMat::zeros(n, n);
                for (i, row) in matrix.iter().enumerate() {
                    for (j, &[re, im]) in row.iter().enumerate() {
                        m[(i, j)] = c(re, im);
                    }
                }
                Ok(m)
            }
        }
    }
}

/// Named single-qubit/two-qubit gate or an explicit unitary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GateIdealSpec {
    Named(String),
    Unitary(UnitarySpec),
}

impl GateIdealSpec {
    pub fn build(&self) -> Result<CMat> {
        match self {
            GateIdealSpec::Named(name) => match name.as_str() {
                "h" => {
                    let s = 1.0 / 2.0f64.sqrt();
                    Ok(CMat::from_row_slice(2, 2, &[cr(s), cr(s), cr(s), cr(-s)]))
                }
                "s" => Ok(CMat::from_row_slice(
                    2,
                    2,
                    &[cr(1.0), cr(0.0), cr(0.0), c(0.0, 1.0)],
                )),
                "x" => Ok(paulis()[1].clone()),
                "y" => Ok(paulis()[2].clone()),
                "z" => Ok(paulis()[3].clone()),
                "id" => Ok(identity(2)),
                other => Err(Error::Config {
                    field: "gate.ideal".into(),
                    message: format!("unknown gate name {other:?}"),
                }),
            },
            GateIdealSpec::Unitary(u) => u.build(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateSpec {
    pub name: String,
    pub ideal: GateIdealSpec,
    #[serde(default)]
    pub noise: Option<ChannelSpec>,
}

impl GateSpec {
    pub fn build(&self) -> Result<NoisyGate> {
        let ideal = self.ideal.build()?;
        let noise = self.noise.as_ref().map(|s| s.build()).transpose()?;
        NoisyGate::new(self.name.clone(), ideal, noise, false)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasSpec {
    pub u: UnitarySpec,
    pub d: [f64; 2],
}

impl MeasSpec {
    pub fn build(&self) -> Result<NoisyMeasurement> {
        NoisyMeasurement::new(self.u.build()?, self.d)
    }
}

/// Prepared state: a rotation applied to |0> or an explicit density matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrepSpec {
    Rotation { theta: f64, axis: [f64; 3] },
    Density { rho: Vec<Vec<[f64; 2]>> },
}

impl PrepSpec {
    pub fn build(&self) -> Result<NoisyPrep> {
        match self {
            PrepSpec::Rotation { theta, axis } => {
                let u = UnitarySpec::Rotation { theta: *theta, axis: *axis }.build()?;
                NoisyPrep::from_unitary(&u)
            }
            PrepSpec::Density { rho } => {
                if rho.len() != 2 || rho.iter().any(|r| r.len() != 2) {
                    return Err(Error::Validation("prep density matrix must be 2x2".into()));
                }
                let mut m = CMat::zeros(2, 2);
                for (i, row) in rho.iter().enumerate() {
                    for (j, &[re, im]) in row.iter().enumerate() {
                        m[(i, j)] = c(re, im);
                    }
                }
                NoisyPrep::new(m)
            }
        }
    }
}

/// Noise bound to the encoding circuitry (everything that is twirled).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EncodingNoiseSpec {
    #[serde(default)]
    pub sq_gate: Option<ChannelSpec>,
    #[serde(default)]
    pub cnot: Option<ChannelSpec>,
    #[serde(default)]
    pub prep: Option<PrepSpec>,
}

impl EncodingNoiseSpec {
    pub fn build(&self) -> Result<GhzCircuitNoise> {
        Ok(GhzCircuitNoise {
            sq_gate: self.sq_gate.as_ref().map(|s| s.build()).transpose()?,
            cnot: self.cnot.as_ref().map(|s| s.build()).transpose()?,
            prep: self.prep.as_ref().map(|s| s.build()).transpose()?,
            measurement: None,
            meas_twirl: true,
            channel: None,
        })
    }
}

fn default_layout() -> Layout {
    Layout::TwoQubit
}

fn default_twirl() -> TwirlMode {
    TwirlMode::Exact
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelProtocolFile {
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub channel: Option<ChannelSpec>,
    #[serde(default)]
    pub channels: Option<Vec<ChannelSpec>>,
    #[serde(default)]
    pub y_phase: YPhase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateProtocolFile {
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    pub gate: GateSpec,
    #[serde(default)]
    pub fdag_noise: Option<ChannelSpec>,
    #[serde(default = "default_twirl")]
    pub twirl: TwirlMode,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub y_phase: YPhase,
    #[serde(default)]
    pub encoding: EncodingNoiseSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementProtocolFile {
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    pub measurement: MeasSpec,
    #[serde(default = "default_twirl")]
    pub twirl: TwirlMode,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub y_phase: YPhase,
    #[serde(default)]
    pub encoding: EncodingNoiseSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepProtocolFile {
    pub n: usize,
    pub phi: f64,
    pub prep: PrepSpec,
    #[serde(default)]
    pub measurement: Option<MeasSpec>,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationProtocolFile {
    pub circuit: CircuitSpec,
    pub location: usize,
    pub suspects: Vec<usize>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

/// Qudit channel: explicit Kraus or a Heisenberg-Weyl generator rotation
/// exp(i theta sum_P h_P P).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuditChannelSpec {
    HwRotation { theta: f64, generator: Vec<HwTerm> },
    Kraus { channel: KrausChannel },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HwTerm {
    pub a: usize,
    pub b: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl QuditChannelSpec {
    pub fn build(&self, d: usize) -> Result<KrausChannel> {
        match self {
            QuditChannelSpec::Kraus { channel } => {
                if channel.dim() != d {
                    return Err(Error::Config {
                        field: "channel".into(),
                        message: format!("kraus dim {} does not match d={d}", channel.dim()),
                    });
                }
                Ok(channel.clone())
            }
            QuditChannelSpec::HwRotation { theta, generator } => {
                let mut h = CMat::zeros(d, d);
                for term in generator {
                    if term.a >= d || term.b >= d {
                        return Err(Error::Config {
                            field: "channel.generator".into(),
                            message: format!("label ({},{}) out of range", term.a, term.b),
                        });
                    }
                    h += heisenberg_weyl(d, term.a, term.b) * c(term.re, term.im);
                }
                let h = (&h + h.adjoint()) * cr(0.5);
                let (vals, vecs) = crate::linalg::hermitian_eigen(&h);
                let mut e = CMat::zeros(d, d);
                for (i, &v) in vals.iter().enumerate() {
                    e[(i, i)] = c(0.0, theta * v).exp();
                }
                let u = &vecs * e * vecs.adjoint();
                KrausChannel::unitary(&u)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuditProtocolFile {
    pub d: usize,
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    pub channel: QuditChannelSpec,
}

/// Top-level experiment configuration, dispatched on `protocol`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Channel(ChannelProtocolFile),
    Gate(GateProtocolFile),
    Measurement(MeasurementProtocolFile),
    Prep(PrepProtocolFile),
    Location(LocationProtocolFile),
    QuditChannel(QuditProtocolFile),
}

fn check_n_values(n_values: &[usize]) -> Result<()> {
    if n_values.is_empty() {
        return Err(Error::Config { field: "n_values".into(), message: "must be nonempty".into() });
    }
    if n_values[0] < 2 {
        return Err(Error::Config { field: "n_values".into(), message: "must start at 2".into() });
    }
    if !n_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config {
            field: "n_values".into(),
            message: "must be strictly increasing".into(),
        });
    }
    Ok(())
}

/// Warn when n_max^2 r approaches 1 for the declared channels.
fn small_r_warnings(n_max: usize, channels: &[&KrausChannel]) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut worst = 0.0f64;
    for ch in channels {
        if ch.dim() == 2 {
            if let Ok(r) = worst_case_infidelity(ch) {
                worst = worst.max(r);
            }
        }
    }
    let scale = (n_max * n_max) as f64 * worst;
    if scale >= 1.0 {
        warnings.push(format!(
            "n_max^2 * r = {scale:.3} >= 1: quadratic scaling will saturate; reduce n or the error rate"
        ));
    }
    warnings
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "config".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Structural validation; returns human-readable warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        match self {
            ExperimentConfig::Channel(c) => {
                check_n_values(&c.n_values)?;
                let n_max = *c.n_values.last().unwrap();
                match (&c.channel, &c.channels) {
                    (None, None) => Err(Error::Config {
                        field: "channel".into(),
                        message: "a channel (or per-qubit channels) is required".into(),
                    }),
                    (Some(_), Some(_)) => Err(Error::Config {
                        field: "channel".into(),
                        message: "give either channel or channels, not both".into(),
                    }),
                    (Some(spec), None) => {
                        let ch = spec.build().map_err(|e| Error::Config {
                            field: "channel".into(),
                            message: e.to_string(),
                        })?;
                        Ok(small_r_warnings(n_max, &[&ch]))
                    }
                    (None, Some(specs)) => {
                        if specs.len() < n_max {
                            return Err(Error::Config {
                                field: "channels".into(),
                                message: format!(
                                    "need at least {n_max} per-qubit channels, got {}",
                                    specs.len()
                                ),
                            });
                        }
                        let built: Result<Vec<KrausChannel>> =
                            specs.iter().map(|s| s.build()).collect();
                        let built = built.map_err(|e| Error::Config {
                            field: "channels".into(),
                            message: e.to_string(),
                        })?;
                        Ok(small_r_warnings(n_max, &built.iter().collect::<Vec<_>>()))
                    }
                }
            }
            ExperimentConfig::Gate(g) => {
                check_n_values(&g.n_values)?;
                let gate = g.gate.build().map_err(|e| Error::Config {
                    field: "gate".into(),
                    message: e.to_string(),
                })?;
                if !gate.is_clifford() {
                    return Err(Error::Config {
                        field: "gate".into(),
                        message: "gate protocol requires a Clifford gate".into(),
                    });
                }
                let mut warnings = Vec::new();
                if let Some(noise) = &gate.noise {
                    warnings.extend(small_r_warnings(*g.n_values.last().unwrap(), &[noise]));
                }
                g.encoding.build().map_err(|e| Error::Config {
                    field: "encoding".into(),
                    message: e.to_string(),
                })?;
                Ok(warnings)
            }
            ExperimentConfig::Measurement(m) => {
                check_n_values(&m.n_values)?;
                m.measurement.build().map_err(|e| Error::Config {
                    field: "measurement".into(),
                    message: e.to_string(),
                })?;
                m.encoding.build().map_err(|e| Error::Config {
                    field: "encoding".into(),
                    message: e.to_string(),
                })?;
                Ok(Vec::new())
            }
            ExperimentConfig::Prep(p) => {
                let prep = crate::accumulation::PrepProtocolConfig {
                    n: p.n,
                    phi: p.phi,
                    prep: p.prep.build().map_err(|e| Error::Config {
                        field: "prep".into(),
                        message: e.to_string(),
                    })?,
                    meas: match &p.measurement {
                        Some(m) => m.build().map_err(|e| Error::Config {
                            field: "measurement".into(),
                            message: e.to_string(),
                        })?,
                        None => NoisyMeasurement::ideal(),
                    },
                    shots: p.shots,
                    seed: p.seed,
                };
                prep.validate()
            }
            ExperimentConfig::Location(l) => {
                l.circuit.validate().map_err(|e| Error::Config {
                    field: "circuit".into(),
                    message: e.to_string(),
                })?;
                if !l.suspects.contains(&l.location) {
                    return Err(Error::Config {
                        field: "location".into(),
                        message: "location must be one of the suspects".into(),
                    });
                }
                Ok(Vec::new())
            }
            ExperimentConfig::QuditChannel(q) => {
                check_n_values(&q.n_values)?;
                if !is_prime(q.d) {
                    return Err(Error::Config {
                        field: "d".into(),
                        message: format!("qudit dimension {} must be prime", q.d),
                    });
                }
                q.channel.build(q.d).map_err(|e| Error::Config {
                    field: "channel".into(),
                    message: e.to_string(),
                })?;
                Ok(Vec::new())
            }
        }
    }
}
