//! Current-injection / voltage-measurement protocols and measurement noise.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolKind {
    /// Inject on `(k, k+1)`, measure on `(j, j+1)`.
    #[serde(rename = "adjacent-adjacent")]
    AdjacentAdjacent,
    /// Inject on `(k, k+p/2)`, measure on `(j, j+1)`.
    #[serde(rename = "opposite-adjacent")]
    OppositeAdjacent,
}

impl std::str::FromStr for ProtocolKind {
    type Err = EitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent-adjacent" | "adjacent" => Ok(ProtocolKind::AdjacentAdjacent),
            "opposite-adjacent" | "opposite" => Ok(ProtocolKind::OppositeAdjacent),
            other => Err(EitError::InvalidInput(format!("unknown protocol kind `{other}`"))),
        }
    }
}

/// Which measurement pairs are dropped for a given injection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipPolicy {
    /// Keep every (injection, measurement) combination.
    #[default]
    None,
    /// Drop the measurement taken on the injecting pair itself.
    SamePair,
    /// Drop every measurement that touches an injecting electrode.
    AnyInjecting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub p: usize,
    /// `(source, sink)` electrode pairs.
    pub injections: Vec<[usize; 2]>,
    /// `(high, low)` electrode pairs; the measured value is `U_high - U_low`.
    pub measurements: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "is_default_skip")]
    pub skip: SkipPolicy,
    /// Set when a requested count does not divide `p` and the nearest
    /// uniform selection was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub nonuniform_stride: bool,
}

fn is_default_skip(s: &SkipPolicy) -> bool {
    *s == SkipPolicy::None
}

fn strided(p: usize, count: usize) -> (Vec<usize>, bool) {
    if p % count == 0 {
        let step = p / count;
        ((0..count).map(|k| k * step).collect(), false)
    } else {
        let picks = (0..count)
            .map(|k| ((k * p) as f64 / count as f64).round() as usize % p)
            .collect();
        (picks, true)
    }
}

/// Builds an injection/measurement protocol with `n_c` injections and
/// `n_v` measurements, uniformly strided over the `p` candidates.
pub fn build_protocol(kind: ProtocolKind, p: usize, n_c: usize, n_v: usize) -> Result<Protocol> {
    if p < 2 {
        return Err(EitError::InvalidInput(format!("need at least 2 electrodes, got {p}")));
    }
    if n_c == 0 || n_v == 0 || n_c > p || n_v > p {
        return Err(EitError::InvalidInput(format!(
            "pattern counts must lie in 1..={p} (n_c = {n_c}, n_v = {n_v})"
        )));
    }
    if kind == ProtocolKind::OppositeAdjacent && p % 2 != 0 {
        return Err(EitError::InvalidInput(format!(
            "opposite injection needs an even electrode count, got {p}"
        )));
    }
    let (inj_k, flag_c) = strided(p, n_c);
    let (meas_j, flag_v) = strided(p, n_v);
    let injections = inj_k
        .into_iter()
        .map(|k| match kind {
            ProtocolKind::AdjacentAdjacent => [k, (k + 1) % p],
            ProtocolKind::OppositeAdjacent => [k, (k + p / 2) % p],
        })
        .collect();
    let measurements = meas_j.into_iter().map(|j| [j, (j + 1) % p]).collect();
    let protocol = Protocol {
        kind,
        p,
        injections,
        measurements,
        skip: SkipPolicy::None,
        nonuniform_stride: flag_c || flag_v,
    };
    if protocol.nonuniform_stride {
        log::warn!("{p} electrodes cannot be split into {n_c}x{n_v} equal strides; using nearest-uniform selection");
    }
    protocol.validate()?;
    Ok(protocol)
}

impl Protocol {
    /// Full protocol: every electrode injects and every adjacent pair measures.
    pub fn full(kind: ProtocolKind, p: usize) -> Result<Protocol> {
        build_protocol(kind, p, p, p)
    }

    /// Square undersampling `m = n × n` used by the measurement-count sweep.
    pub fn with_measurement_count(kind: ProtocolKind, p: usize, m: usize) -> Result<Protocol> {
        let n = (m as f64).sqrt().round() as usize;
        if n * n != m {
            return Err(EitError::InvalidInput(format!(
                "measurement count {m} is not a perfect square n_c x n_v"
            )));
        }
        build_protocol(kind, p, n, n)
    }

    pub fn with_skip(mut self, skip: SkipPolicy) -> Self {
        self.skip = skip;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |pairs: &[[usize; 2]], what: &str| -> Result<()> {
            for &[a, b] in pairs {
                if a >= self.p || b >= self.p || a == b {
                    return Err(EitError::InvalidInput(format!(
                        "{what} pair ({a}, {b}) invalid for {} electrodes",
                        self.p
                    )));
                }
            }
            Ok(())
        };
        check(&self.injections, "injection")?;
        check(&self.measurements, "measurement")?;
        if self.injections.is_empty() || self.measurements.is_empty() {
            return Err(EitError::InvalidInput("protocol has no patterns".into()));
        }
        Ok(())
    }

    fn skipped(&self, inj: [usize; 2], meas: [usize; 2]) -> bool {
        match self.skip {
            SkipPolicy::None => false,
            SkipPolicy::SamePair => {
                (inj[0] == meas[0] && inj[1] == meas[1]) || (inj[0] == meas[1] && inj[1] == meas[0])
            }
            SkipPolicy::AnyInjecting => meas.iter().any(|e| inj.contains(e)),
        }
    }

    /// `(injection index, measurement index)` for every recorded datum, injection-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.injections.len() * self.measurements.len());
        for (c, &inj) in self.injections.iter().enumerate() {
            for (v, &meas) in self.measurements.iter().enumerate() {
                if !self.skipped(inj, meas) {
                    out.push((c, v));
                }
            }
        }
        out
    }

    pub fn n_c(&self) -> usize {
        self.injections.len()
    }

    pub fn n_v(&self) -> usize {
        self.measurements.len()
    }

    /// Number of recorded measurements.
    pub fn m(&self) -> usize {
        self.pairs().len()
    }

    /// Unit current vector for an electrode pair: +1 A into `a`, −1 A out of `b`.
    pub fn pattern_currents(&self, pair: [usize; 2]) -> Vec<f64> {
        let mut i = vec![0.0; self.p];
        i[pair[0]] += 1.0;
        i[pair[1]] -= 1.0;
        i
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Protocol> {
        let p: Protocol = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Protocol> {
        let path = path.as_ref();
        Protocol::from_json(&std::fs::read_to_string(path)?).map_err(|e| EitError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// How the standard normal draw is scaled into the noise vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScaling {
    /// `η = δ̄ ‖V‖₂ g`, `g ~ N(0, I_m)`: each component has standard
    /// deviation `δ̄ ‖V‖₂`, so `E‖η‖₂ ≈ δ̄ ‖V‖₂ √m`.
    #[default]
    PerComponent,
    /// `η = δ̄ ‖V‖₂ g / √m`, so `E‖η‖₂ ≈ δ̄ ‖V‖₂`.
    Normalized,
}

/// Noisy data together with the noise that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub noisy: Vec<f64>,
    pub eta: Vec<f64>,
    /// ‖η‖₂
    pub delta: f64,
    /// `10 log10(‖V‖² / ‖η‖²)`; `+∞` for noise-free data.
    pub snr_db: f64,
}

/// Measurement record: protocol, clean and noisy data, noise and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub protocol: Protocol,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl MeasurementFrame {
    pub fn new(protocol: Protocol, clean: Vec<f64>, noise_level: f64, seed: u64, scaling: NoiseScaling) -> Self {
        let draw = add_noise(&clean, noise_level, seed, scaling);
        MeasurementFrame {
            protocol,
            clean,
            noisy: draw.noisy,
            eta: draw.eta,
            delta: draw.delta,
            noise_level,
            seed,
        }
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Standard normal vector of length `m` for a given seed.
pub fn gaussian_direction(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Adds white Gaussian noise at relative level `noise_level`.
pub fn add_noise(clean: &[f64], noise_level: f64, seed: u64, scaling: NoiseScaling) -> NoiseDraw {
    let signal = norm2(clean);
    if noise_level == 0.0 || clean.is_empty() {
        return NoiseDraw {
            noisy: clean.to_vec(),
            eta: vec![0.0; clean.len()],
            delta: 0.0,
            snr_db: f64::INFINITY,
        };
    }
    let m = clean.len() as f64;
    let scale = match scaling {
        NoiseScaling::PerComponent => noise_level * signal,
        NoiseScaling::Normalized => noise_level * signal / m.sqrt(),
    };
    let eta: Vec<f64> = gaussian_direction(clean.len(), seed)
        .into_iter()
        .map(|g| scale * g)
        .collect();
    let noisy = clean.iter().zip(&eta).map(|(c, e)| c + e).collect();
    let delta = norm2(&eta);
    NoiseDraw {
        noisy,
        eta,
        delta,
        snr_db: snr_db(signal, delta),
    }
}

pub fn snr_db(signal_norm: f64, noise_norm: f64) -> f64 {
    if noise_norm == 0.0 {
        f64::INFINITY
    } else {
        10.0 * ((signal_norm * signal_norm) / (noise_norm * noise_norm)).log10()
    }
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Per-vertex, per-measurement input features for the support estimator.
///
/// Entry `(i, r)` is `Λ_r / (d_V + d_I)` where `d_V` and `d_I` are the
/// distances from vertex `i` to the midpoints of the measuring and injecting
/// electrode pairs (midpoint of the segment joining the two electrode centres).
pub fn oracle_feature_weights(mesh: &Mesh, protocol: &Protocol, data: &[f64]) -> Result<DMatrix<f64>> {
    let pairs = protocol.pairs();
    if data.len() != pairs.len() {
        return Err(EitError::InvalidInput(format!(
            "data has {} entries but the protocol records {}",
            data.len(),
            pairs.len()
        )));
    }
    if mesh.n_electrodes() != protocol.p {
        return Err(EitError::InvalidInput(format!(
            "protocol uses {} electrodes, mesh has {}",
            protocol.p,
            mesh.n_electrodes()
        )));
    }
    let centers: Vec<[f64; 2]> = (0..protocol.p).map(|j| mesh.electrode_center(j)).collect();
    let mid = |pair: [usize; 2]| midpoint(centers[pair[0]], centers[pair[1]]);
    let n = mesh.n_vertices();
    let mut w = DMatrix::zeros(n, pairs.len());
    for (r, &(c, v)) in pairs.iter().enumerate() {
        let mi = mid(protocol.injections[c]);
        let mv = mid(protocol.measurements[v]);
        for (i, x) in mesh.vertices.iter().enumerate() {
            let d = (x[0] - mv[0]).hypot(x[1] - mv[1]) + (x[0] - mi[0]).hypot(x[1] - mi[1]);
            if !(d > 0.0) {
                return Err(EitError::Numerical(format!(
                    "vertex {i} coincides with both pattern midpoints of measurement {r}"
                )));
            }
            w[(i, r)] = data[r] / d;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    #[test]
    fn full_32_electrode_protocol_has_1024_measurements() {
        let p = build_protocol(ProtocolKind::OppositeAdjacent, 32, 32, 32).unwrap();
        assert_eq!(p.m(), 1024);
        assert!(!p.nonuniform_stride);
    }

    #[test]
    fn adjacent_injections_for_four_electrodes() {
        let p = Protocol::full(ProtocolKind::AdjacentAdjacent, 4).unwrap();
        assert_eq!(p.injections, vec![[0, 1], [1, 2], [2, 3], [3, 0]]);
    }

    #[test]
    fn uniform_stride_selection() {
        let p = build_protocol(ProtocolKind::OppositeAdjacent, 32, 4, 4).unwrap();
        let sources: Vec<usize> = p.injections.iter().map(|x| x[0]).collect();
        assert_eq!(sources, vec![0, 8, 16, 24]);
        assert_eq!(p.injections[1], [8, 24]);
        assert_eq!(p.m(), 16);
    }

    #[test]
    fn nonuniform_stride_is_flagged() {
        let p = build_protocol(ProtocolKind::AdjacentAdjacent, 16, 3, 16).unwrap();
        assert!(p.nonuniform_stride);
        let sources: Vec<usize> = p.injections.iter().map(|x| x[0]).collect();
        assert_eq!(sources, vec![0, 5, 11]);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(build_protocol(ProtocolKind::OppositeAdjacent, 15, 3, 3).is_err());
        assert!(build_protocol(ProtocolKind::AdjacentAdjacent, 16, 17, 3).is_err());
        assert!(Protocol::with_measurement_count(ProtocolKind::AdjacentAdjacent, 16, 15).is_err());
    }

    #[test]
    fn full_adjacent_protocol_counts() {
        let p = Protocol::full(ProtocolKind::AdjacentAdjacent, 16).unwrap();
        let pairs = p.pairs();
        assert_eq!(pairs.len(), 256);
        for e in 0..16 {
            let as_source = pairs.iter().filter(|&&(c, _)| p.injections[c][0] == e).count();
            assert_eq!(as_source, 16);
        }
    }

    #[test]
    fn skipping_the_injecting_pair_gives_992() {
        let p = Protocol::full(ProtocolKind::AdjacentAdjacent, 32)
            .unwrap()
            .with_skip(SkipPolicy::SamePair);
        assert_eq!(p.m(), 992);
        let p = p.with_skip(SkipPolicy::AnyInjecting);
        assert_eq!(p.m(), 32 * 29);
    }

    #[test]
    fn protocol_json_round_trip() {
        let p = build_protocol(ProtocolKind::AdjacentAdjacent, 16, 3, 5)
            .unwrap()
            .with_skip(SkipPolicy::SamePair);
        let text = p.to_json().unwrap();
        let back = Protocol::from_json(&text).unwrap();
        assert_eq!(p, back);
        assert_eq!(text, back.to_json().unwrap());
        assert!(text.contains("\"kind\":\"adjacent-adjacent\""));
    }

    #[test]
    fn zero_noise_is_identity() {
        let clean = vec![1.0, -2.0, 3.0];
        let d = add_noise(&clean, 0.0, 5, NoiseScaling::PerComponent);
        assert_eq!(d.noisy, clean);
        assert!(d.snr_db.is_infinite() && d.snr_db > 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let clean: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let a = add_noise(&clean, 1e-2, 9, NoiseScaling::PerComponent);
        let b = add_noise(&clean, 1e-2, 9, NoiseScaling::PerComponent);
        assert_eq!(a, b);
        let c = add_noise(&clean, 1e-2, 10, NoiseScaling::PerComponent);
        assert_ne!(a.eta, c.eta);
    }

    #[test]
    fn noise_norm_matches_scaling_on_average() {
        let clean: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let signal = norm2(&clean);
        let m = clean.len() as f64;
        for scaling in [NoiseScaling::PerComponent, NoiseScaling::Normalized] {
            let mut ratio = 0.0;
            for seed in 0..1000 {
                let d = add_noise(&clean, 2.5e-3, seed, scaling);
                let g = norm2(&gaussian_direction(clean.len(), seed));
                let expect = match scaling {
                    NoiseScaling::PerComponent => 2.5e-3 * signal * g,
                    NoiseScaling::Normalized => 2.5e-3 * signal * g / m.sqrt(),
                };
                assert!((d.delta - expect).abs() <= 1e-12 * expect);
                ratio += d.delta;
            }
            ratio /= 1000.0;
            let nominal = match scaling {
                NoiseScaling::PerComponent => 2.5e-3 * signal * m.sqrt(),
                NoiseScaling::Normalized => 2.5e-3 * signal,
            };
            assert!((ratio / nominal - 1.0).abs() < 0.02, "{scaling:?}: {ratio} vs {nominal}");
        }
    }

    #[test]
    fn features_scale_linearly_and_favour_nearby_vertices() {
        let mesh = build_disk_mesh(1.0, 0.15, 16, 0.5).unwrap();
        let p = Protocol::full(ProtocolKind::AdjacentAdjacent, 16).unwrap();
        let data: Vec<f64> = (0..p.m()).map(|r| 1.0 + (r as f64 * 0.1).sin()).collect();
        let w = oracle_feature_weights(&mesh, &p, &data).unwrap();
        let doubled: Vec<f64> = data.iter().map(|x| 2.0 * x).collect();
        let w2 = oracle_feature_weights(&mesh, &p, &doubled).unwrap();
        assert!((w2 - &w * 2.0).abs().max() < 1e-12);
        // centre vertex sees every midpoint at distance ≈ 1
        let c = 1.0 / (std::f64::consts::PI / 16.0).cos();
        for r in 0..p.m() {
            assert!((w[(0, r)] - data[r] / 2.0 * c).abs() < 0.02 * data[r].abs());
        }
        assert!(oracle_feature_weights(&mesh, &p, &data[1..]).is_err());
    }
}
