//! Proximal-gradient reconstruction.
//!
//! Iterates `σ⁺ = prox_{μλg}(σ − μ∇f(σ))` with
//! `f(σ) = ½‖Φ(σ) − Λ^δ‖² + (λρ/2)‖σ‖²` and `g = R + χ_K`.

use std::fmt;
use std::str::FromStr;

use log::debug;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::forward::{ForwardContext, JacobianMatrix};
use crate::prox::{prox_g, Penalty, RegularizerConfig};
use crate::protocol::norm2;

pub const DEFAULT_RHO: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const STEP_SAFETY: f64 = 0.99;
pub const POWER_ITERATIONS: usize = 50;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "pgm-l1")]
    L1,
    #[serde(rename = "pgm-tv")]
    Tv,
    #[serde(rename = "pgm-l1-mo")]
    L1Masked,
    #[serde(rename = "pgm-tv-mo")]
    TvMasked,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::L1, Variant::Tv, Variant::L1Masked, Variant::TvMasked];

    pub fn penalty(self) -> Penalty {
        match self {
            Variant::L1 | Variant::L1Masked => Penalty::L1,
            Variant::Tv | Variant::TvMasked => Penalty::Tv,
        }
    }

    pub fn is_masked(self) -> bool {
        matches!(self, Variant::L1Masked | Variant::TvMasked)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::L1 => "pgm-l1",
            Variant::Tv => "pgm-tv",
            Variant::L1Masked => "pgm-l1-mo",
            Variant::TvMasked => "pgm-tv-mo",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = EitError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EitError::InvalidInput(format!("unknown variant '{s}' (expected pgm-l1, pgm-tv, pgm-l1-mo or pgm-tv-mo)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    pub lambda: f64,
    pub rho: f64,
    pub step: StepSize,
    pub max_iters: usize,
    pub tol: f64,
    /// Halve the step whenever the objective would increase.
    pub backtracking: bool,
    /// Lower RIP constant, used only for the reported contraction factor.
    pub alpha_hat: Option<f64>,
    /// Nonlinearity constant, used only for the reported contraction factor.
    pub gamma_hat: Option<f64>,
}

impl SolverConfig {
    pub fn new(variant: Variant, lambda: f64) -> Self {
        SolverConfig {
            variant,
            lambda,
            rho: DEFAULT_RHO,
            step: StepSize::Auto,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            backtracking: true,
            alpha_hat: None,
            gamma_hat: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(EitError::InvalidInput(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(EitError::InvalidInput(format!("rho must be nonnegative, got {}", self.rho)));
        }
        if let StepSize::Fixed(mu) = self.step {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(EitError::InvalidInput(format!("step size must be positive, got {mu}")));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(EitError::InvalidInput(format!("tolerance must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step length along the proximal path decreased the objective.
    Stalled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub variant: Variant,
    pub lambda: f64,
    pub rho: f64,
    pub sigma: Vec<f64>,
    pub objective: Vec<f64>,
    pub change: Vec<f64>,
    /// Step size at the start of the run.
    pub mu: f64,
    /// Step size after backtracking.
    pub mu_final: f64,
    pub alpha_hat: Option<f64>,
    pub beta_hat: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub contraction: Option<f64>,
    pub iterations: usize,
    pub backtracks: usize,
    pub termination: Termination,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `½‖Φ(σ) − Λ‖² + (λρ/2)‖σ‖²` from a precomputed `Φ(σ)`.
fn smooth_part(phi: &[f64], data: &[f64], sigma: &[f64], lambda: f64, rho: f64) -> f64 {
    let r: f64 = phi.iter().zip(data).map(|(a, b)| (a - b).powi(2)).sum();
    let s: f64 = sigma.iter().map(|v| v * v).sum();
    0.5 * r + 0.5 * lambda * rho * s
}

fn objective_from_phi(phi: &[f64], data: &[f64], sigma: &[f64], config: &SolverConfig, reg: &RegularizerConfig) -> f64 {
    if !reg.is_feasible(sigma) {
        return f64::INFINITY;
    }
    smooth_part(phi, data, sigma, config.lambda, config.rho) + config.lambda * reg.penalty_value(sigma)
}

/// `J_λ^δ(σ)`; `+∞` off `K`.
pub fn objective(
    ctx: &ForwardContext<'_>,
    sigma: &[f64],
    data: &[f64],
    config: &SolverConfig,
    reg: &RegularizerConfig,
) -> Result<f64> {
    if !reg.is_feasible(sigma) {
        return Ok(f64::INFINITY);
    }
    let phi = ctx.phi(sigma)?;
    Ok(objective_from_phi(&phi, data, sigma, config, reg))
}

fn gradient_from(jac: &JacobianMatrix, phi: &[f64], data: &[f64], sigma: &[f64], lambda: f64, rho: f64) -> Vec<f64> {
    let r: Vec<f64> = phi.iter().zip(data).map(|(a, b)| a - b).collect();
    let mut g = jac.transpose_mul(&r);
    for (gi, s) in g.iter_mut().zip(sigma) {
        *gi += lambda * rho * s;
    }
    g
}

/// `J(σ)ᵀ(Φ(σ) − Λ) + λρσ`.
pub fn grad_f(ctx: &ForwardContext<'_>, sigma: &[f64], data: &[f64], lambda: f64, rho: f64) -> Result<Vec<f64>> {
    check_data(ctx, data)?;
    let (phi, jac) = ctx.phi_and_jacobian(sigma)?;
    Ok(gradient_from(&jac, &phi, data, sigma, lambda, rho))
}

/// `0.99 · min(1/(2β̂), 1/(2λρ))`.
pub fn choose_step_size(beta_hat: f64, lambda: f64, rho: f64) -> Result<f64> {
    if !(beta_hat > 0.0 && beta_hat.is_finite()) {
        return Err(EitError::InvalidInput(format!("beta estimate must be positive, got {beta_hat}")));
    }
    let lr = lambda * rho;
    let cap = if lr > 0.0 { 1.0 / (2.0 * lr) } else { f64::INFINITY };
    Ok(STEP_SAFETY * (1.0 / (2.0 * beta_hat)).min(cap))
}

/// Largest eigenvalue of `AᵀA` by power iteration from a fixed random start.
pub fn power_iteration(a: &nalgebra::DMatrix<f64>, steps: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut est = 0.0;
    for _ in 0..steps {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let w = a.transpose() * (a * &v);
        est = v.dot(&w);
        v = w;
    }
    est
}

fn check_data(ctx: &ForwardContext<'_>, data: &[f64]) -> Result<()> {
    if data.len() != ctx.m() {
        return Err(EitError::InvalidInput(format!(
            "data has {} entries, protocol records {}",
            data.len(),
            ctx.m()
        )));
    }
    Ok(())
}

/// `β̂` at `σ`, restricted to the mask columns when the regulariser is masked.
pub fn estimate_beta(jac: &JacobianMatrix, reg: &RegularizerConfig) -> f64 {
    match &reg.mask {
        Some(mask) => {
            let cols = mask.active();
            if cols.is_empty() {
                return 0.0;
            }
            power_iteration(&jac.entries.select_columns(cols.iter()), POWER_ITERATIONS)
        }
        None => power_iteration(&jac.entries, POWER_ITERATIONS),
    }
}

pub fn run_pgm(
    ctx: &ForwardContext<'_>,
    init: &[f64],
    data: &[f64],
    config: &SolverConfig,
    reg: &RegularizerConfig,
) -> Result<SolveReport> {
    config.validate()?;
    check_data(ctx, data)?;
    if init.len() != ctx.n() {
        return Err(EitError::InvalidInput(format!(
            "initial field has {} values, mesh has {} vertices",
            init.len(),
            ctx.n()
        )));
    }
    if config.variant.is_masked() != reg.mask.is_some() {
        return Err(EitError::InvalidInput(format!(
            "variant {} {} an oracle mask",
            config.variant,
            if config.variant.is_masked() { "requires" } else { "does not take" }
        )));
    }
    if config.variant.penalty() != reg.penalty {
        return Err(EitError::InvalidInput(format!(
            "variant {} does not match the configured penalty",
            config.variant
        )));
    }

    let mut sigma = reg.project(init);
    let (mut phi, mut jac) = ctx.phi_and_jacobian(&sigma)?;
    let mut obj = objective_from_phi(&phi, data, &sigma, config, reg);
    if !obj.is_finite() {
        return Err(EitError::Diverged {
            iteration: 0,
            reason: "objective is not finite at the initial iterate".into(),
        });
    }

    let (mu0, beta_hat) = match config.step {
        StepSize::Fixed(mu) => (mu, None),
        StepSize::Auto => {
            let beta = estimate_beta(&jac, reg);
            if beta > 0.0 {
                (choose_step_size(beta, config.lambda, config.rho)?, Some(beta))
            } else {
                // Nothing to fit; any step reaches the prox fixed point.
                (1.0, Some(beta))
            }
        }
    };
    let contraction = match (config.alpha_hat, config.gamma_hat) {
        (Some(a), Some(g)) => Some(1.0 - mu0 * config.lambda * config.rho - mu0 * a + 2.0 * mu0 * g),
        _ => None,
    };

    let mut mu = mu0;
    let mut objective_trace = vec![obj];
    let mut change_trace = vec![0.0];
    let mut backtracks = 0;
    let mut termination = Termination::MaxIterations;

    for it in 1..=config.max_iters {
        let grad = gradient_from(&jac, &phi, data, &sigma, config.lambda, config.rho);
        let mut attempt = 0;
        let accepted = loop {
            let step: Vec<f64> = sigma.iter().zip(&grad).map(|(s, g)| s - mu * g).collect();
            let cand = prox_g(&step, mu * config.lambda, reg)?;
            let (cphi, cjac) = ctx.phi_and_jacobian(&cand)?;
            let cobj = objective_from_phi(&cphi, data, &cand, config, reg);
            if !cobj.is_finite() {
                return Err(EitError::Diverged {
                    iteration: it,
                    reason: format!("objective became {cobj} (trace: {objective_trace:?})"),
                });
            }
            if cobj <= obj || !config.backtracking {
                break Some((cand, cphi, cjac, cobj));
            }
            attempt += 1;
            if attempt > MAX_BACKTRACKS {
                break None;
            }
            mu *= 0.5;
            backtracks += 1;
            debug!("iteration {it}: objective rose to {cobj:e} from {obj:e}, step halved to {mu:e}");
        };
        let Some((cand, cphi, cjac, cobj)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let diff: f64 = cand.iter().zip(&sigma).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let rel = diff / norm2(&sigma).max(1.0);
        sigma = cand;
        phi = cphi;
        jac = cjac;
        obj = cobj;
        objective_trace.push(obj);
        change_trace.push(rel);
        if rel < config.tol {
            termination = Termination::Converged;
            break;
        }
    }

    let iterations = objective_trace.len() - 1;
    Ok(SolveReport {
        variant: config.variant,
        lambda: config.lambda,
        rho: config.rho,
        sigma,
        objective: objective_trace,
        change: change_trace,
        mu: mu0,
        mu_final: mu,
        alpha_hat: config.alpha_hat,
        beta_hat,
        gamma_hat: config.gamma_hat,
        contraction,
        iterations,
        backtracks,
        termination,
    })
}

/// `max ‖Φ(σ1) − Φ(σ2) − J(σ2)(σ1 − σ2)‖² / ‖σ1 − σ2‖²` over the pairs.
pub fn estimate_gamma(ctx: &ForwardContext<'_>, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut gamma: f64 = 0.0;
    for (s1, s2) in pairs {
        let d: Vec<f64> = s1.iter().zip(s2).map(|(a, b)| a - b).collect();
        let dn = d.iter().map(|v| v * v).sum::<f64>();
        if dn == 0.0 {
            continue;
        }
        let p1 = ctx.phi(s1)?;
        let (p2, jac) = ctx.phi_and_jacobian(s2)?;
        let lin = jac.mul(&d);
        let rem: f64 = p1
            .iter()
            .zip(&p2)
            .zip(&lin)
            .map(|((a, b), l)| (a - b - l).powi(2))
            .sum();
        gamma = gamma.max(rem / dn);
    }
    Ok(gamma)
}

/// Distance of a cluster point from a feasible `σ`, against the bound
/// `4/(α + λρ − 2γ) · J_λ(σ)` when the denominator is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterBoundProbe {
    pub distance_sq: f64,
    pub bound: Option<f64>,
}

impl ClusterBoundProbe {
    pub fn new(cluster: &[f64], sigma: &[f64], objective_at_sigma: f64, alpha: f64, lambda: f64, rho: f64, gamma: f64) -> Self {
        let distance_sq = cluster.iter().zip(sigma).map(|(a, b)| (a - b).powi(2)).sum();
        let denom = alpha + lambda * rho - 2.0 * gamma;
        ClusterBoundProbe {
            distance_sq,
            bound: (denom > 0.0).then(|| 4.0 / denom * objective_at_sigma),
        }
    }

    /// `None` when the parameter condition fails and nothing is claimed.
    pub fn holds(&self) -> Option<bool> {
        self.bound.map(|b| self.distance_sq <= b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_formula() {
        assert!((choose_step_size(1.0, 1.0, 0.0).unwrap() - 0.495).abs() < 1e-15);
        let mu = choose_step_size(1.0, 1e6, 1.0).unwrap();
        assert!((mu - 0.99 / 2e6).abs() < 1e-18);
        assert!(choose_step_size(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn power_iteration_finds_the_top_eigenvalue() {
        let a = nalgebra::DMatrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((power_iteration(&a, 50) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("pgm".parse::<Variant>().is_err());
    }

    #[test]
    fn cluster_probe_abstains_without_margin() {
        let p = ClusterBoundProbe::new(&[1.0], &[0.0], 1.0, 0.1, 1.0, 0.0, 1.0);
        assert_eq!(p.holds(), None);
        let p = ClusterBoundProbe::new(&[1.0], &[0.0], 1.0, 4.0, 1.0, 0.0, 0.0);
        assert_eq!(p.holds(), Some(true));
    }
}
