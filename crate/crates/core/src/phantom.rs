//! Synthetic circular-inclusion phantoms and image metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::mesh::{Mesh, VertexAdjacency};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub min_inclusions: usize,
    pub max_inclusions: usize,
    pub radius_range: (f64, f64),
    /// Absolute conductivity inside an inclusion.
    pub value_range: (f64, f64),
    pub background: f64,
    /// Inclusions lie entirely inside this radius.
    pub placement_radius: f64,
    pub max_attempts: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            min_inclusions: 1,
            max_inclusions: 4,
            radius_range: (0.15, 0.25),
            value_range: (0.2, 2.0),
            background: 1.0,
            placement_radius: 0.75,
            max_attempts: 1000,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EitError::InvalidInput(msg.to_string()));
        if self.min_inclusions > self.max_inclusions {
            return bad("inclusion count range is empty");
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad("radius range must satisfy 0 < r0 <= r1");
        }
        let (v0, v1) = self.value_range;
        if !(v0 > 0.0 && v0 <= v1) {
            return bad("value range must satisfy 0 < v0 <= v1");
        }
        if !(self.background > 0.0) {
            return bad("background conductivity must be positive");
        }
        if self.max_inclusions > 0 && !(self.placement_radius > r1) {
            return bad("placement radius must exceed the largest inclusion radius");
        }
        Ok(())
    }

    /// Smallest and largest value a generated field can take.
    pub fn value_envelope(&self) -> (f64, f64) {
        (
            self.value_range.0.min(self.background),
            self.value_range.1.max(self.background),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub value: f64,
}

impl Inclusion {
    pub fn contains(&self, x: [f64; 2]) -> bool {
        (x[0] - self.center[0]).hypot(x[1] - self.center[1]) < self.radius
    }

    fn overlaps(&self, other: &Inclusion) -> bool {
        let d = (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1]);
        d <= self.radius + other.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub sigma: Vec<f64>,
    pub inclusions: Vec<Inclusion>,
}

/// Background everywhere except vertices strictly inside an inclusion.
pub fn rasterize(mesh: &Mesh, background: f64, inclusions: &[Inclusion]) -> Vec<f64> {
    mesh.vertices
        .iter()
        .map(|&x| {
            inclusions
                .iter()
                .find(|inc| inc.contains(x))
                .map_or(background, |inc| inc.value)
        })
        .collect()
}

pub fn generate_phantom(mesh: &Mesh, config: &PhantomConfig, seed: u64) -> Result<Phantom> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_phantom_with(mesh, config, &mut rng)
}

pub fn generate_phantom_with<R: Rng>(mesh: &Mesh, config: &PhantomConfig, rng: &mut R) -> Result<Phantom> {
    config.validate()?;
    let count = rng.random_range(config.min_inclusions..=config.max_inclusions);
    let mut inclusions: Vec<Inclusion> = Vec::with_capacity(count);
    let mut attempts = 0;
    while inclusions.len() < count {
        attempts += 1;
        if attempts > config.max_attempts {
            return Err(EitError::RejectionBudget(config.max_attempts));
        }
        let radius = sample(rng, config.radius_range);
        let value = sample(rng, config.value_range);
        let reach = config.placement_radius - radius;
        // uniform in the disk of radius `reach`
        let rr = reach * rng.random::<f64>().sqrt();
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let cand = Inclusion {
            center: [rr * th.cos(), rr * th.sin()],
            radius,
            value,
        };
        if inclusions.iter().all(|inc| !inc.overlaps(&cand)) {
            inclusions.push(cand);
        }
    }
    Ok(Phantom {
        sigma: rasterize(mesh, config.background, &inclusions),
        inclusions,
    })
}

fn sample<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Number of graph edges whose endpoint values differ by more than `tol`.
pub fn gradient_sparsity(sigma: &[f64], adjacency: &VertexAdjacency, tol: f64) -> usize {
    adjacency
        .edges()
        .filter(|&(i, k, _)| (sigma[i] - sigma[k]).abs() > tol)
        .count()
}

/// `10 log10(peak² / MSE)`; `+∞` for identical fields.
pub fn psnr(reconstruction: &[f64], truth: &[f64], peak: f64) -> f64 {
    assert_eq!(reconstruction.len(), truth.len());
    let mse = reconstruction
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / truth.len().max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR with `peak = max(σ†)`.
pub fn psnr_max_peak(reconstruction: &[f64], truth: &[f64]) -> f64 {
    let peak = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    psnr(reconstruction, truth, peak)
}

/// `‖σ − σ†‖₂ / ‖σ†‖₂`.
pub fn rel_err(reconstruction: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(reconstruction.len(), truth.len());
    let num: f64 = reconstruction.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    #[test]
    fn forced_empty_phantom_is_constant() {
        let mesh = build_disk_mesh(1.0, 0.2, 8, 0.5).unwrap();
        let cfg = PhantomConfig {
            min_inclusions: 0,
            max_inclusions: 0,
            ..PhantomConfig::default()
        };
        let ph = generate_phantom(&mesh, &cfg, 3).unwrap();
        assert!(ph.sigma.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn impossible_packing_exhausts_the_budget() {
        let mesh = build_disk_mesh(1.0, 0.3, 8, 0.5).unwrap();
        let cfg = PhantomConfig {
            min_inclusions: 4,
            max_inclusions: 4,
            radius_range: (0.3, 0.3),
            placement_radius: 0.4,
            max_attempts: 50,
            ..PhantomConfig::default()
        };
        assert!(matches!(generate_phantom(&mesh, &cfg, 0), Err(EitError::RejectionBudget(50))));
    }

    #[test]
    fn metrics_edge_cases() {
        let t = [1.0, 2.0, 1.0];
        assert_eq!(rel_err(&t, &t), 0.0);
        assert_eq!(psnr(&t, &t, 2.0), f64::INFINITY);
        let r = [1.0, 2.5, 1.0];
        let expect = 10.0 * (4.0_f64 / (0.25 / 3.0)).log10();
        assert!((psnr(&r, &t, 2.0) - expect).abs() < 1e-12);
        let c = 3.0;
        let rs: Vec<f64> = r.iter().map(|v| v * c).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
        assert!((rel_err(&rs, &ts) - rel_err(&r, &t)).abs() < 1e-15);
    }
}
