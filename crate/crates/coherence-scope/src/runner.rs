//! Config-driven orchestration: dispatch a protocol run, write results.csv
//! and report.json, re-fit existing CSVs, and the transfer-vs-brute-force
//! oracle suite.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::accumulation::{self, PrepProtocolConfig};
use crate::channel::KrausChannel;
use crate::circuit::{self, CircuitProtocolConfig, NoisyMeasurement};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimator::{
    classify_accumulation, extract_channel_params, extract_measurement_params, wls_quadratic_fit,
    ClassifyConfig, CoherenceEstimate, FitReport, Verdict,
};
use crate::ghz::{self, GhzBasis, GhzExperiment, GhzResultRow, YPhase};
use crate::qudit::{self, QuditResultRow};
use crate::{coherence, linalg, rng};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct FitJson {
    a: f64,
    b: f64,
    c: f64,
    cov: [[f64; 3]; 3],
    stderr_a: f64,
    verdict: Verdict,
}

impl FitJson {
    fn new(fit: &FitReport, cfg: &ClassifyConfig) -> Self {
        FitJson {
            a: fit.a,
            b: fit.b,
            c: fit.c,
            cov: fit.cov,
            stderr_a: fit.stderr_a(),
            verdict: classify_accumulation(fit, cfg),
        }
    }
}

#[derive(Serialize)]
struct EstimateReport {
    protocol: String,
    fits: BTreeMap<String, FitJson>,
    theta2: f64,
    theta2_stderr: f64,
    v2: Option<BTreeMap<String, f64>>,
    v2_stderr: Option<BTreeMap<String, f64>>,
    verdict: Verdict,
    clamped: Vec<String>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn rows_to_csv(rows: &[GhzResultRow]) -> String {
    let mut out = String::from(GhzResultRow::csv_header());
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

fn fit_rows(rows: &[GhzResultRow]) -> Result<BTreeMap<GhzBasis, FitReport>> {
    let mut fits = BTreeMap::new();
    for basis in GhzBasis::ALL {
        let points: Vec<(usize, f64, f64)> = rows
            .iter()
            .filter(|r| r.basis == basis)
            .map(|r| (r.n, r.p_error, r.stderr))
            .collect();
        if points.is_empty() {
            continue;
        }
        fits.insert(basis, wls_quadratic_fit(&points)?);
    }
    Ok(fits)
}

fn estimate_report(
    protocol: &str,
    rows: &[GhzResultRow],
    measurement_style: bool,
) -> Result<(EstimateReport, CoherenceEstimate)> {
    let cfg = ClassifyConfig::default();
    let fits = fit_rows(rows)?;
    let estimate = if measurement_style {
        extract_measurement_params(&fits, &cfg)?
    } else {
        extract_channel_params(&fits, &cfg)?
    };
    let fits_json: BTreeMap<String, FitJson> = fits
        .iter()
        .map(|(basis, fit)| (basis.label().to_string(), FitJson::new(fit, &cfg)))
        .collect();
    Ok((
        EstimateReport {
            protocol: protocol.to_string(),
            fits: fits_json,
            theta2: estimate.theta2,
            theta2_stderr: estimate.theta2_stderr,
            v2: estimate.v2.clone(),
            v2_stderr: estimate.v2_stderr.clone(),
            verdict: estimate.verdict,
            clamped: estimate.clamped.clone(),
        },
        estimate,
    ))
}

/// Run the configured experiment; writes results.csv and report.json into
/// `out_dir`.
pub fn run(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    jobs: Option<usize>,
) -> Result<RunOutput> {
    let config = ExperimentConfig::load(config_path)?;
    let warnings = config.validate()?;
    if let Some(k) = jobs {
        // Parallelism changes scheduling only; per-(basis, n) RNG streams
        // keep outputs byte-identical.
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().ok();
    }
    let csv_path = out_dir.join("results.csv");
    let report_path = out_dir.join("report.json");
    let files = vec![csv_path.clone(), report_path.clone()];

    match config {
        ExperimentConfig::Channel(c) => {
            let assignment = circuit::assignment_from_specs(
                c.channel.as_ref(),
                c.channels.as_deref(),
            )?
            .ok_or_else(|| Error::Config {
                field: "channel".into(),
                message: "a channel is required".into(),
            })?;
            let exp = GhzExperiment {
                n_values: c.n_values.clone(),
                channels: assignment,
                shots: c.shots,
                seed: seed_override.unwrap_or(c.seed),
                y_phase: c.y_phase,
            };
            let rows = ghz::run_channel_protocol(&exp)?;
            write_file(&csv_path, rows_to_csv(&rows).as_bytes())?;
            let (report, _) = estimate_report("channel", &rows, false)?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::Gate(g) => {
            let gate = g.gate.build()?;
            let fdag_noise = g.fdag_noise.as_ref().map(|s| s.build()).transpose()?;
            let cfg = CircuitProtocolConfig {
                n_values: g.n_values.clone(),
                shots: g.shots,
                seed: seed_override.unwrap_or(g.seed),
                layout: g.layout,
                twirl: g.twirl,
                y_phase: g.y_phase,
                encoding_noise: g.encoding.build()?,
            };
            let rows = circuit::run_gate_protocol(&gate, fdag_noise.as_ref(), &cfg)?;
            write_file(&csv_path, rows_to_csv(&rows).as_bytes())?;
            let (report, _) = estimate_report("gate", &rows, false)?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::Measurement(m) => {
            let meas = m.measurement.build()?;
            let cfg = CircuitProtocolConfig {
                n_values: m.n_values.clone(),
                shots: m.shots,
                seed: seed_override.unwrap_or(m.seed),
                layout: m.layout,
                twirl: m.twirl,
                y_phase: m.y_phase,
                encoding_noise: m.encoding.build()?,
            };
            let rows = circuit::run_measurement_protocol(&meas, &cfg)?;
            write_file(&csv_path, rows_to_csv(&rows).as_bytes())?;
            let (report, _) = estimate_report("measurement", &rows, true)?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::Prep(p) => {
            let cfg = PrepProtocolConfig {
                n: p.n,
                phi: p.phi,
                prep: p.prep.build()?,
                meas: p.measurement.as_ref().map(|m| m.build()).transpose()?
                    .unwrap_or_else(NoisyMeasurement::ideal),
                shots: p.shots,
                seed: seed_override.unwrap_or(p.seed),
            };
            let report = accumulation::run_prep_protocol(&cfg)?;
            let probs = report.probabilities;
            let mut csv = String::from("variant,n,phi,p\n");
            for (name, steps, p_val) in [
                ("p0_twirled", 0, probs.p0_twirled),
                ("p0", 0, probs.p0),
                ("pn_twirled_x", cfg.n, probs.pn_twirled_x),
                ("pn_x", cfg.n, probs.pn_x),
                ("pn_twirled_y", cfg.n, probs.pn_twirled_y),
                ("pn_y", cfg.n, probs.pn_y),
            ] {
                csv.push_str(&format!("{name},{steps},{},{}\n", cfg.phi, p_val));
            }
            write_file(&csv_path, csv.as_bytes())?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::Location(l) => {
            let report =
                accumulation::location_coherence_test(&l.circuit, l.location, &l.suspects, l.kappa)?;
            let mut csv = String::from("quantity,value\n");
            for (name, v) in [
                ("f_baseline", report.f_baseline),
                ("f_j", report.f_j),
                ("f_plain", report.f_plain),
                ("delta_f", report.delta_f),
                ("threshold", report.threshold),
            ] {
                csv.push_str(&format!("{name},{v}\n"));
            }
            write_file(&csv_path, csv.as_bytes())?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::QuditChannel(q) => {
            let channel = q.channel.build(q.d)?;
            let rows = qudit::run_qudit_protocol(
                q.d,
                &channel,
                &q.n_values,
                q.shots,
                seed_override.unwrap_or(q.seed),
            )?;
            let mut csv = String::from(QuditResultRow::csv_header());
            csv.push('\n');
            for row in &rows {
                csv.push_str(&row.to_csv());
                csv.push('\n');
            }
            write_file(&csv_path, csv.as_bytes())?;
            let report = qudit_report(&rows)?;
            write_json(&report_path, &report)?;
        }
    }
    Ok(RunOutput { files, warnings })
}

#[derive(Serialize)]
struct QuditReport {
    protocol: String,
    fits: BTreeMap<String, FitJson>,
    theta2: f64,
    theta2_stderr: f64,
    v_weights: BTreeMap<String, f64>,
    verdict: Verdict,
}

fn qudit_report(rows: &[QuditResultRow]) -> Result<QuditReport> {
    let cfg = ClassifyConfig::default();
    let mut grouped: BTreeMap<String, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for row in rows {
        let key = format!("X^{}Z^{}", row.p_a, row.p_b);
        grouped.entry(key).or_default().push((row.n, row.p_error, row.stderr));
    }
    let mut fits = BTreeMap::new();
    let mut theta2 = 0.0;
    let mut var = 0.0;
    let mut any_quadratic = false;
    let mut all_linear = true;
    let mut a_by_pair = BTreeMap::new();
    for (key, points) in &grouped {
        let fit = wls_quadratic_fit(points)?;
        let verdict = classify_accumulation(&fit, &cfg);
        if verdict == Verdict::Quadratic {
            any_quadratic = true;
        }
        if verdict != Verdict::Linear {
            all_linear = false;
        }
        let a_pos = fit.a.max(0.0);
        theta2 += a_pos;
        var += fit.cov[0][0].max(0.0);
        a_by_pair.insert(key.clone(), a_pos);
        fits.insert(key.clone(), FitJson::new(&fit, &cfg));
    }
    let verdict = if any_quadratic && theta2 > 0.0 {
        Verdict::Quadratic
    } else if all_linear || theta2 <= 0.0 {
        Verdict::Linear
    } else {
        Verdict::Inconclusive
    };
    let v_weights = a_by_pair
        .into_iter()
        .map(|(k, a)| (k, if theta2 > 0.0 { a / theta2 } else { 0.0 }))
        .collect();
    Ok(QuditReport {
        protocol: "qudit-channel".to_string(),
        fits,
        theta2,
        theta2_stderr: var.sqrt(),
        v_weights,
        verdict,
    })
}

/// Re-fit an existing results.csv (written by `run`) and regenerate
/// report.json deterministically.
pub fn refit(config_path: &Path, out_dir: &Path) -> Result<RunOutput> {
    let config = ExperimentConfig::load(config_path)?;
    let csv_path = out_dir.join("results.csv");
    let report_path = out_dir.join("report.json");
    let text = std::fs::read_to_string(&csv_path)?;
    match config {
        ExperimentConfig::Channel(_) | ExperimentConfig::Gate(_) => {
            let rows = parse_ghz_csv(&text)?;
            let (report, _) = estimate_report(
                if matches!(config, ExperimentConfig::Channel(_)) { "channel" } else { "gate" },
                &rows,
                false,
            )?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::Measurement(_) => {
            let rows = parse_ghz_csv(&text)?;
            let (report, _) = estimate_report("measurement", &rows, true)?;
            write_json(&report_path, &report)?;
        }
        ExperimentConfig::QuditChannel(_) => {
            let rows = parse_qudit_csv(&text)?;
            let report = qudit_report(&rows)?;
            write_json(&report_path, &report)?;
        }
        _ => {
            return Err(Error::Unsupported(
                "fit applies to channel, gate, measurement, and qudit-channel runs".into(),
            ))
        }
    }
    Ok(RunOutput { files: vec![report_path], warnings: Vec::new() })
}

fn parse_ghz_csv(text: &str) -> Result<Vec<GhzResultRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Validation(format!("csv line {} has {} fields", i + 1, fields.len())));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Validation(format!("bad {what}: {s:?}")))
        };
        rows.push(GhzResultRow {
            basis: GhzBasis::from_label(fields[0])?,
            n: fields[1].parse().map_err(|_| Error::Validation(format!("bad n: {:?}", fields[1])))?,
            shots: fields[2].parse().unwrap_or(0),
            error_count: if fields[3].is_empty() { None } else { fields[3].parse().ok() },
            p_error: parse_f(fields[4], "p_error")?,
            stderr: parse_f(fields[5], "stderr")?,
        });
    }
    Ok(rows)
}

fn parse_qudit_csv(text: &str) -> Result<Vec<QuditResultRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Validation(format!("csv line {} has {} fields", i + 1, fields.len())));
        }
        let p = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Validation(format!("bad integer {s:?}")))
        };
        rows.push(QuditResultRow {
            d: p(fields[0])?,
            p_a: p(fields[1])?,
            p_b: p(fields[2])?,
            q_a: p(fields[3])?,
            q_b: p(fields[4])?,
            n: p(fields[5])?,
            shots: fields[6].parse().unwrap_or(0),
            error_count: if fields[7].is_empty() { None } else { fields[7].parse().ok() },
            p_error: fields[8].parse().map_err(|_| Error::Validation("bad p_error".into()))?,
            stderr: fields[9].parse().map_err(|_| Error::Validation("bad stderr".into()))?,
        });
    }
    Ok(rows)
}

/// Outcome of the oracle cross-check suite.
#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub qubit_cases: usize,
    pub qudit_cases: usize,
    pub max_deviation: f64,
}

fn random_qubit_channel(stream: &mut rand_chacha::ChaCha12Rng) -> KrausChannel {
    use rand::Rng;
    let mut f = |lo: f64, hi: f64| stream.random_range(lo..hi);
    let rot = KrausChannel::rotation(
        f(0.0, 0.3),
        [f(-1.0, 1.0), f(-1.0, 1.0), f(-1.0, 1.0)],
    )
    .unwrap();
    let dep = KrausChannel::depolarizing(f(0.0, 0.3)).unwrap();
    let damp = KrausChannel::amplitude_damping(f(0.0, 0.3)).unwrap();
    let deph = KrausChannel::dephasing(f(0.0, 0.3)).unwrap();
    let w = [f(0.2, 1.0), f(0.0, 0.4), f(0.0, 0.4), f(0.0, 0.4)];
    let total: f64 = w.iter().sum();
    KrausChannel::convex_mix(
        &[rot, dep, damp, deph],
        &[w[0] / total, w[1] / total, w[2] / total, w[3] / total],
    )
    .unwrap()
}

/// Transfer-product vs brute-force cross-check: `tuples` random per-qubit
/// channel tuples, all three bases, n = 2..=8, plus qutrit checks for
/// n <= 5. Returns the maximum absolute deviation observed.
pub fn oracle_suite(seed: u64, tuples: usize) -> Result<OracleOutcome> {
    let qubit_devs: Vec<f64> = (0..tuples)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut stream = rng::derive_stream(seed, &["oracle", "qubit"], &[t as u64]);
            let channels: Vec<KrausChannel> =
                (0..8).map(|_| random_qubit_channel(&mut stream)).collect();
            let mut worst = 0.0f64;
            for n in 2..=8usize {
                let refs: Vec<&KrausChannel> = channels[..n].iter().collect();
                for basis in GhzBasis::ALL {
                    let fast = ghz::accept_probability(&refs, basis, YPhase::Standard)?;
                    let slow = ghz::accept_probability_bruteforce(&refs, basis, YPhase::Standard)?;
                    worst = worst.max((fast - slow).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let qubit_cases = tuples * 7 * 3;

    let qudit_trials = 10usize;
    let qudit_devs: Vec<f64> = (0..qudit_trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            use rand::Rng;
            let mut stream = rng::derive_stream(seed, &["oracle", "qutrit"], &[t as u64]);
            let mut h = linalg::CMat::zeros(3, 3);
            for a in 0..3 {
                for b in 0..3 {
                    if (a, b) != (0, 0) {
                        let coef = linalg::c(
                            stream.random_range(-0.1..0.1),
                            stream.random_range(-0.1..0.1),
                        );
                        h += qudit::heisenberg_weyl(3, a, b) * coef;
                    }
                }
            }
            let h = (&h + h.adjoint()) * linalg::cr(0.5);
            let (vals, vecs) = linalg::hermitian_eigen(&h);
            let mut e = linalg::CMat::zeros(3, 3);
            for (i, &v) in vals.iter().enumerate() {
                e[(i, i)] = linalg::c(0.0, v).exp();
            }
            let u = &vecs * e * vecs.adjoint();
            let q: f64 = stream.random_range(0.0..0.1);
            let ch = KrausChannel::convex_mix(
                &[
                    KrausChannel::unitary(&u).unwrap(),
                    KrausChannel::unitary(&qudit::heisenberg_weyl(3, 1, 0)).unwrap(),
                ],
                &[1.0 - q, q],
            )
            .unwrap();
            let mut worst = 0.0f64;
            for n in 2..=5usize {
                let refs = vec![&ch; n];
                for pair in qudit::sensitive_pair_set(3)? {
                    let fast = qudit::qudit_accept_probability(&refs, &pair)?;
                    let slow = qudit::qudit_accept_bruteforce(&refs, &pair)?;
                    worst = worst.max((fast - slow).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let qudit_cases = qudit_trials * 4 * 4;

    let max_deviation = qubit_devs
        .iter()
        .chain(qudit_devs.iter())
        .cloned()
        .fold(0.0f64, f64::max);
    Ok(OracleOutcome { qubit_cases, qudit_cases, max_deviation })
}

/// Leading-Kraus sanity sweep used by the oracle subcommand: rotation
/// channels must round-trip their (theta, axis) through Choi
/// diagonalization and the polar decomposition.
pub fn coherence_roundtrip_suite(seed: u64, cases: usize) -> Result<f64> {
    use rand::Rng;
    let mut worst = 0.0f64;
    let mut stream = rng::derive_stream(seed, &["oracle", "coherence"], &[]);
    for _ in 0..cases {
        let theta: f64 = stream.random_range(0.005..0.3);
        let mut axis = [
            stream.random_range(-1.0..1.0f64),
            stream.random_range(-1.0..1.0f64),
            stream.random_range(-1.0..1.0f64),
        ];
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if norm < 0.1 {
            continue;
        }
        axis = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
        let ch = KrausChannel::rotation(theta, axis)?;
        let a0 = coherence::leading_kraus(&ch)?;
        let params = coherence::coherence_params(&a0, 2)?;
        let q = params.as_qubit().expect("qubit params");
        worst = worst.max((q.theta - theta).abs());
        for k in 0..3 {
            worst = worst.max((q.axis[k] - axis[k]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("coherence-scope-test-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn end_to_end_channel_run_and_refit() {
        let dir = temp_dir("run");
        let config_path = dir.join("config.json");
        let config = r#"{
            "protocol": "channel",
            "n_values": [2, 4, 6, 8, 10, 12],
            "shots": 0,
            "seed": 11,
            "channel": {"kind": "rotation", "theta": 0.02, "axis": [0.0, 0.0, 1.0]}
        }"#;
        std::fs::write(&config_path, config).unwrap();
        let out = run(&config_path, &dir, None, None).unwrap();
        assert_eq!(out.files.len(), 2);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report["verdict"], "quadratic");
        let v2z = report["v2"]["Z"].as_f64().unwrap();
        assert!((v2z - 1.0).abs() < 0.02, "v2_Z = {v2z}");
        let theta2 = report["theta2"].as_f64().unwrap();
        assert!((theta2 - 4e-4).abs() < 0.1 * 4e-4);

        // Determinism: a second run produces byte-identical outputs.
        let dir2 = temp_dir("run2");
        std::fs::write(dir2.join("config.json"), config).unwrap();
        run(&dir2.join("config.json"), &dir2, None, None).unwrap();
        let a = std::fs::read(dir.join("results.csv")).unwrap();
        let b = std::fs::read(dir2.join("results.csv")).unwrap();
        assert_eq!(a, b);

        // Refit reproduces the report bit-for-bit.
        let before = std::fs::read(dir.join("report.json")).unwrap();
        refit(&config_path, &dir).unwrap();
        let after = std::fs::read(dir.join("report.json")).unwrap();
        assert_eq!(before, after);

        std::fs::remove_dir_all(&dir).ok();
        std::fs::remove_dir_all(&dir2).ok();
    }

    #[test]
    fn oracle_suite_small() {
        let outcome = oracle_suite(3, 3).unwrap();
        assert!(outcome.max_deviation < 1e-10, "max dev = {}", outcome.max_deviation);
    }

    #[test]
    fn csv_parse_roundtrip() {
        let rows = vec![
            GhzResultRow {
                basis: GhzBasis::X,
                n: 4,
                shots: 100,
                error_count: Some(3),
                p_error: 0.03,
                stderr: 0.017,
            },
            GhzResultRow {
                basis: GhzBasis::Z,
                n: 6,
                shots: 0,
                error_count: None,
                p_error: 0.25,
                stderr: 0.0,
            },
        ];
        let text = rows_to_csv(&rows);
        let parsed = parse_ghz_csv(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].error_count, Some(3));
        assert_eq!(parsed[1].error_count, None);
        assert_eq!(parsed[1].p_error, 0.25);
    }
}
