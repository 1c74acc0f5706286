//! Binary support masks bound to a mesh, and the false-negative metric.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::mesh::{Mesh, VertexAdjacency};

pub const MASK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ideal,
    File,
    Thresholded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMask {
    pub bits: Vec<bool>,
    pub mesh_digest: String,
    pub provenance: Provenance,
    pub sigma_th: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    version: u32,
    mesh_digest: String,
    provenance: Provenance,
    sigma_th: Option<f64>,
    bits: Vec<u8>,
}

impl OracleMask {
    pub fn new(bits: Vec<bool>, mesh_digest: impl Into<String>, provenance: Provenance) -> Self {
        OracleMask {
            bits,
            mesh_digest: mesh_digest.into(),
            provenance,
            sigma_th: None,
        }
    }

    pub fn all(n: usize, value: bool, mesh_digest: impl Into<String>) -> Self {
        OracleMask::new(vec![value; n], mesh_digest, Provenance::File)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn cardinality(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Active indices `I_O`, ascending.
    pub fn active(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// `self ⊆ other` as index sets.
    pub fn is_subset_of(&self, other: &OracleMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        self.check_binding(&mesh.digest(), mesh.n_vertices())
    }

    pub fn check_binding(&self, digest: &str, n: usize) -> Result<()> {
        if self.mesh_digest != digest {
            return Err(EitError::DigestMismatch {
                expected: digest.to_string(),
                found: self.mesh_digest.clone(),
            });
        }
        if self.bits.len() != n {
            return Err(EitError::InvalidInput(format!(
                "mask has {} entries, mesh has {n} vertices",
                self.bits.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MaskFile {
            version: MASK_FORMAT_VERSION,
            mesh_digest: self.mesh_digest.clone(),
            provenance: self.provenance,
            sigma_th: self.sigma_th,
            bits: self.bits.iter().map(|&b| b as u8).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(text)?;
        if file.version != MASK_FORMAT_VERSION {
            return Err(EitError::InvalidInput(format!("unsupported mask version {}", file.version)));
        }
        let bits = file
            .bits
            .iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(EitError::InvalidInput(format!("mask bit {i} is {b}, expected 0 or 1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        if let Some(t) = file.sigma_th {
            if !(0.0..=1.0).contains(&t) {
                return Err(EitError::InvalidInput(format!("sigma_th {t} outside [0, 1]")));
            }
        }
        Ok(OracleMask {
            bits,
            mesh_digest: file.mesh_digest,
            provenance: file.provenance,
            sigma_th: file.sigma_th,
        })
    }
}

pub fn write_mask(mask: &OracleMask, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mask.to_json()?)?;
    Ok(())
}

/// Reads a mask and checks that it is bound to `mesh`.
pub fn read_mask(path: impl AsRef<Path>, mesh: &Mesh) -> Result<OracleMask> {
    let mask = read_mask_unchecked(&path)?;
    mask.check_mesh(mesh)?;
    Ok(mask)
}

pub fn read_mask_unchecked(path: impl AsRef<Path>) -> Result<OracleMask> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    OracleMask::from_json(&text).map_err(|e| EitError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Default support tolerance for a box `[c0, c1]`.
pub fn support_tolerance(lower: f64, upper: f64) -> f64 {
    1e-6 * (upper - lower)
}

/// Mask of `|σ†_i − σ0_i| > tol`, grown by `hops` graph neighbourhoods.
pub fn ideal_oracle(
    sigma_true: &[f64],
    sigma0: &[f64],
    tol: f64,
    hops: usize,
    adjacency: &VertexAdjacency,
    mesh_digest: &str,
) -> Result<OracleMask> {
    if !(tol > 0.0) {
        return Err(EitError::InvalidInput(format!("support tolerance must be positive, got {tol}")));
    }
    if sigma_true.len() != sigma0.len() || sigma0.len() != adjacency.len() {
        return Err(EitError::InvalidInput("field, reference and adjacency sizes differ".into()));
    }
    let mut bits: Vec<bool> = sigma_true.iter().zip(sigma0).map(|(a, b)| (a - b).abs() > tol).collect();
    for _ in 0..hops {
        let prev = bits.clone();
        for (i, nb) in adjacency.neighbors.iter().enumerate() {
            if prev[i] {
                for &k in nb {
                    bits[k] = true;
                }
            }
        }
    }
    Ok(OracleMask::new(bits, mesh_digest, Provenance::Ideal))
}

pub fn threshold_probabilities(probs: &[f64], sigma_th: f64, mesh_digest: &str) -> Result<OracleMask> {
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(EitError::InvalidInput(format!("probability {p} at vertex {i} outside [0, 1]")));
    }
    let mut mask = OracleMask::new(
        probs.iter().map(|&p| p >= sigma_th).collect(),
        mesh_digest,
        Provenance::Thresholded,
    );
    mask.sigma_th = Some(sigma_th);
    Ok(mask)
}

/// Percentage of all vertices that are in `truth` but missing from `predicted`.
pub fn fn_rate(predicted: &OracleMask, truth: &OracleMask) -> Result<f64> {
    if predicted.mesh_digest != truth.mesh_digest {
        return Err(EitError::DigestMismatch {
            expected: truth.mesh_digest.clone(),
            found: predicted.mesh_digest.clone(),
        });
    }
    if predicted.len() != truth.len() {
        return Err(EitError::InvalidInput("masks have different lengths".into()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let missed = truth.bits.iter().zip(&predicted.bits).filter(|(&t, &p)| t && !p).count();
    Ok(100.0 * missed as f64 / truth.len() as f64)
}

/// `‖σ0 + M ⊙ (σ − σ0) − σ‖₂`.
pub fn projection_residual(sigma: &[f64], sigma0: &[f64], mask: &OracleMask) -> f64 {
    sigma
        .iter()
        .zip(sigma0)
        .zip(&mask.bits)
        .filter(|(_, &b)| !b)
        .map(|((s, r), _)| (r - s).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    #[test]
    fn fn_rate_definitions() {
        let truth = OracleMask::new(vec![true, true, false, false, true], "d", Provenance::Ideal);
        assert_eq!(fn_rate(&truth, &truth).unwrap(), 0.0);
        assert_eq!(fn_rate(&OracleMask::all(5, true, "d"), &truth).unwrap(), 0.0);
        assert_eq!(fn_rate(&OracleMask::all(5, false, "d"), &truth).unwrap(), 60.0);
        assert!(fn_rate(&OracleMask::all(5, false, "e"), &truth).is_err());
    }

    #[test]
    fn thresholding_is_monotone() {
        let probs = [0.1, 0.45, 0.85, 0.95, 1.0, 0.0];
        let sizes: Vec<usize> = [0.0, 0.4, 0.8, 0.9]
            .iter()
            .map(|&t| threshold_probabilities(&probs, t, "d").unwrap().cardinality())
            .collect();
        assert_eq!(sizes, vec![6, 4, 3, 2]);
        assert!(threshold_probabilities(&[1.5], 0.5, "d").is_err());
        let bits = [1.0, 0.0, 1.0];
        for t in [0.01, 0.5, 1.0] {
            let m = threshold_probabilities(&bits, t, "d").unwrap();
            assert_eq!(m.bits, vec![true, false, true]);
        }
    }

    #[test]
    fn dilation_grows_the_mask() {
        let mesh = build_disk_mesh(1.0, 0.1, 8, 0.5).unwrap();
        let adj = mesh.vertex_adjacency().unwrap();
        let d = mesh.digest();
        let s0 = vec![1.0; mesh.n_vertices()];
        let st: Vec<f64> = mesh
            .vertices
            .iter()
            .map(|v| if (v[0] - 0.2).hypot(v[1]) < 0.2 { 1.5 } else { 1.0 })
            .collect();
        assert_eq!(ideal_oracle(&s0, &s0, 1e-6, 2, &adj, &d).unwrap().cardinality(), 0);
        let masks: Vec<OracleMask> = (0..4).map(|h| ideal_oracle(&st, &s0, 1e-6, h, &adj, &d).unwrap()).collect();
        let support = st.iter().filter(|&&v| v != 1.0).count();
        assert_eq!(masks[0].cardinality(), support);
        for w in masks.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
            assert!(w[1].cardinality() > w[0].cardinality());
        }
    }

    #[test]
    fn json_round_trip_and_digest_check() {
        let mesh = build_disk_mesh(1.0, 0.3, 4, 0.5).unwrap();
        let mut mask = OracleMask::all(mesh.n_vertices(), false, mesh.digest());
        mask.bits[3] = true;
        mask.provenance = Provenance::Thresholded;
        mask.sigma_th = Some(0.8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_mask(&mask, &path).unwrap();
        assert_eq!(read_mask(&path, &mesh).unwrap(), mask);
        let tampered = std::fs::read_to_string(&path).unwrap().replace(&mesh.digest(), &"0".repeat(64));
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(read_mask(&path, &mesh), Err(EitError::DigestMismatch { .. })));
        std::fs::write(&path, "{\"version\":1}").unwrap();
        assert!(matches!(read_mask(&path, &mesh), Err(EitError::Malformed { .. })));
    }

    #[test]
    fn projection_residual_identity() {
        let s0 = [1.0, 1.0, 1.0, 1.0];
        let st = [1.0, 2.0, 0.5, 1.0];
        let sup = OracleMask::new(vec![false, true, true, false], "d", Provenance::Ideal);
        assert_eq!(projection_residual(&st, &s0, &sup), 0.0);
        let sub = OracleMask::new(vec![false, true, false, false], "d", Provenance::Ideal);
        assert_eq!(projection_residual(&st, &s0, &sub), 0.5);
    }
}
