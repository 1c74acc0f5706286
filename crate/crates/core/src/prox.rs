//! Proximal maps of the penalties and projections onto the constraint sets.
//!
//! `prox_{τ(R + χ_K)} = proj_K ∘ prox_{τR}` for the componentwise sets used
//! here, so [`prox_g`] applies the penalty first and projects afterwards.

use serde::{Deserialize, Serialize};

use crate::conductivity::Bounds;
use crate::error::{EitError, Result};
use crate::mesh::{Mesh, VertexAdjacency};
use crate::oracle::OracleMask;

pub const DEFAULT_TV_SWEEPS: usize = 50;
pub const DEFAULT_TV_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    Tv,
}

/// `σ0 + sign(v − σ0) · max(0, |v − σ0| − t)`.
pub fn soft_threshold(v: &[f64], t: f64, sigma0: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(sigma0)
        .map(|(&x, &r)| {
            let d = x - r;
            r + d.signum() * (d.abs() - t).max(0.0)
        })
        .collect()
}

/// Minimiser of `½(x − data)² + τ Σ w_k |x − ν_k|`, with `ν` sorted ascending.
pub fn prox_tv_local(data: f64, neighbor_values: &[f64], weights: &[f64], tau: f64) -> f64 {
    let d = neighbor_values.len();
    if d == 0 {
        return data;
    }
    let total: f64 = weights.iter().sum();
    let mut cand = Vec::with_capacity(2 * d + 1);
    cand.extend_from_slice(neighbor_values);
    let mut below = 0.0;
    cand.push(data + tau * total);
    for &w in weights {
        below += w;
        cand.push(data + tau * (total - 2.0 * below));
    }
    let (_, med, _) = cand.select_nth_unstable_by(d, f64::total_cmp);
    *med
}

/// `Σ_{i<k} w_ik |x_i − x_k|`, each undirected edge counted once.
pub fn tv_value(x: &[f64], adjacency: &VertexAdjacency) -> f64 {
    adjacency.edges().map(|(i, k, w)| w * (x[i] - x[k]).abs()).sum()
}

/// Gauss–Seidel sweeps of the local median formula, in ascending vertex order.
/// Returns the iterate and the number of sweeps performed.
pub fn prox_tv(sigma: &[f64], tau: f64, adjacency: &VertexAdjacency, max_sweeps: usize, tol: f64) -> (Vec<f64>, usize) {
    let mut x = sigma.to_vec();
    if tau == 0.0 {
        return (x, 0);
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut vals = Vec::new();
    let mut ws = Vec::new();
    for sweep in 1..=max_sweeps {
        let mut change: f64 = 0.0;
        for i in 0..x.len() {
            pairs.clear();
            pairs.extend(
                adjacency.neighbors[i]
                    .iter()
                    .zip(&adjacency.weights[i])
                    .map(|(&k, &w)| (x[k], w)),
            );
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            vals.clear();
            ws.clear();
            vals.extend(pairs.iter().map(|p| p.0));
            ws.extend(pairs.iter().map(|p| p.1));
            let new = prox_tv_local(sigma[i], &vals, &ws, tau);
            change = change.max((new - x[i]).abs());
            x[i] = new;
        }
        if change < tol {
            return (x, sweep);
        }
    }
    (x, max_sweeps)
}

pub fn project_box(sigma: &[f64], bounds: &Bounds) -> Vec<f64> {
    sigma.iter().map(|&s| s.clamp(bounds.lower, bounds.upper)).collect()
}

/// `σ0 + M ⊙ (σ − σ0)`.
pub fn project_oracle(sigma: &[f64], mask: &OracleMask, sigma0: &[f64]) -> Result<Vec<f64>> {
    if mask.len() != sigma.len() || sigma0.len() != sigma.len() {
        return Err(EitError::InvalidInput(format!(
            "mask length {} does not match field length {}",
            mask.len(),
            sigma.len()
        )));
    }
    Ok(sigma
        .iter()
        .zip(sigma0)
        .zip(&mask.bits)
        .map(|((&s, &r), &b)| if b { s } else { r })
        .collect())
}

/// Penalty, reference, constraint set and inner-solver settings.
#[derive(Debug, Clone)]
pub struct RegularizerConfig {
    pub penalty: Penalty,
    pub reference: Vec<f64>,
    pub bounds: Bounds,
    pub mask: Option<OracleMask>,
    pub adjacency: VertexAdjacency,
    pub mesh_digest: String,
    pub tv_max_sweeps: usize,
    pub tv_tol: f64,
    /// Penalise `TV(σ − σ0)` instead of `TV(σ)`.
    pub tv_relative_to_reference: bool,
}

impl RegularizerConfig {
    pub fn new(mesh: &Mesh, penalty: Penalty, reference: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if reference.len() != mesh.n_vertices() {
            return Err(EitError::InvalidInput(format!(
                "reference has {} values, mesh has {} vertices",
                reference.len(),
                mesh.n_vertices()
            )));
        }
        if !bounds.contains_all(&reference) {
            return Err(EitError::InvalidInput("reference conductivity lies outside the box".into()));
        }
        Ok(RegularizerConfig {
            penalty,
            reference,
            bounds,
            mask: None,
            adjacency: mesh.vertex_adjacency()?,
            mesh_digest: mesh.digest(),
            tv_max_sweeps: DEFAULT_TV_SWEEPS,
            tv_tol: DEFAULT_TV_TOL,
            tv_relative_to_reference: false,
        })
    }

    pub fn with_mask(mut self, mask: OracleMask) -> Result<Self> {
        mask.check_binding(&self.mesh_digest, self.reference.len())?;
        self.mask = Some(mask);
        Ok(self)
    }

    /// `R(σ)`.
    pub fn penalty_value(&self, sigma: &[f64]) -> f64 {
        match self.penalty {
            Penalty::L1 => sigma.iter().zip(&self.reference).map(|(s, r)| (s - r).abs()).sum(),
            Penalty::Tv if self.tv_relative_to_reference => {
                let d: Vec<f64> = sigma.iter().zip(&self.reference).map(|(s, r)| s - r).collect();
                tv_value(&d, &self.adjacency)
            }
            Penalty::Tv => tv_value(sigma, &self.adjacency),
        }
    }

    /// `σ ∈ K` (box, and the oracle hyperplane when masked).
    pub fn is_feasible(&self, sigma: &[f64]) -> bool {
        if !self.bounds.contains_all(sigma) {
            return false;
        }
        match &self.mask {
            Some(mask) => sigma
                .iter()
                .zip(&self.reference)
                .zip(&mask.bits)
                .all(|((s, r), &b)| b || s == r),
            None => true,
        }
    }

    /// `proj_K`.
    pub fn project(&self, sigma: &[f64]) -> Vec<f64> {
        let boxed = project_box(sigma, &self.bounds);
        match &self.mask {
            Some(mask) => project_oracle(&boxed, mask, &self.reference).expect("mask bound at construction"),
            None => boxed,
        }
    }
}

/// `prox_{τ(R + χ_K)}(σ)`.
pub fn prox_g(sigma: &[f64], tau: f64, config: &RegularizerConfig) -> Result<Vec<f64>> {
    if sigma.len() != config.reference.len() {
        return Err(EitError::InvalidInput(format!(
            "field has {} values, regulariser expects {}",
            sigma.len(),
            config.reference.len()
        )));
    }
    if !(tau >= 0.0) {
        return Err(EitError::InvalidInput(format!("prox parameter must be nonnegative, got {tau}")));
    }
    let penalised = match config.penalty {
        Penalty::L1 => soft_threshold(sigma, tau, &config.reference),
        Penalty::Tv if config.tv_relative_to_reference => {
            let d: Vec<f64> = sigma.iter().zip(&config.reference).map(|(s, r)| s - r).collect();
            let (y, _) = prox_tv(&d, tau, &config.adjacency, config.tv_max_sweeps, config.tv_tol);
            y.iter().zip(&config.reference).map(|(y, r)| y + r).collect()
        }
        Penalty::Tv => prox_tv(sigma, tau, &config.adjacency, config.tv_max_sweeps, config.tv_tol).0,
    };
    Ok(config.project(&penalised))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        let s0 = [1.0, 1.0, 2.0];
        assert_eq!(soft_threshold(&[3.0, -1.0, 2.0], 0.0, &s0), vec![3.0, -1.0, 2.0]);
        let out = soft_threshold(&[2.2, 0.7, 2.0], 0.5, &s0);
        assert!((out[0] - 1.7).abs() < 1e-15);
        assert_eq!(out[1], 1.0);
        assert_eq!(out[2], 2.0);
    }

    #[test]
    fn local_median_cases() {
        assert_eq!(prox_tv_local(0.0, &[-1.0, 1.0], &[1.0, 1.0], 0.1), 0.0);
        assert!((prox_tv_local(0.0, &[1.0], &[1.0], 0.3) - 0.3).abs() < 1e-15);
        assert_eq!(prox_tv_local(0.0, &[1.0], &[1.0], 2.0), 1.0);
        assert_eq!(prox_tv_local(0.7, &[], &[], 5.0), 0.7);
    }

    #[test]
    fn box_projection() {
        let b = Bounds::new(0.1, 3.0).unwrap();
        assert_eq!(project_box(&[1.0, 4.0, 0.0], &b), vec![1.0, 3.0, 0.1]);
    }

    #[test]
    fn oracle_projection() {
        let s0 = [1.0, 1.0, 1.0];
        let x = [0.5, 2.0, 3.0];
        let ones = OracleMask::all(3, true, "d");
        let zeros = OracleMask::all(3, false, "d");
        assert_eq!(project_oracle(&x, &ones, &s0).unwrap(), x.to_vec());
        assert_eq!(project_oracle(&x, &zeros, &s0).unwrap(), s0.to_vec());
        let mut mixed = zeros.clone();
        mixed.bits[1] = true;
        assert_eq!(project_oracle(&x, &mixed, &s0).unwrap(), vec![1.0, 2.0, 1.0]);
        assert!(project_oracle(&[1.0], &mixed, &[1.0]).is_err());
    }
}
