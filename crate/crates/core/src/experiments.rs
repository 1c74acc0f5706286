//! Desk-scale studies: variant comparison, noise-rate scaling, the
//! measurement-count sweep and λ selection.
//!
//! Every study runs its independent cells through [`par::try_map_indexed`]
//! with sequential forward solves inside each cell, then assembles rows in a
//! fixed order, so results do not depend on the thread count.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conductivity::Bounds;
use crate::dataset::Dataset;
use crate::error::{EitError, Result};
use crate::forward::{ForwardContext, ForwardModel};
use crate::io::format_f64;
use crate::mesh::{DiskMeshSpec, Mesh};
use crate::oracle::{fn_rate, ideal_oracle, read_mask, support_tolerance, OracleMask};
use crate::par::{self, Execution};
use crate::pgm::{run_pgm, SolveReport, SolverConfig, Termination, Variant, DEFAULT_MAX_ITERS, DEFAULT_RHO, DEFAULT_TOL};
use crate::phantom::{psnr_max_peak, rasterize, rel_err, Inclusion};
use crate::protocol::{add_noise, gaussian_direction, norm2, Protocol, ProtocolKind};
use crate::prox::RegularizerConfig;
use crate::table::{Metadata, Table};

pub const DESK_LAMBDA_TV: f64 = 1e-8;
pub const DESK_LAMBDA_L1: f64 = 1e-7;

pub const RATE_C: f64 = 1e-4;
pub const RATE_DELTAS: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
pub const RATE_DIRECTION_SEED: u64 = 7;
pub const RATE_MAX_ITERS: usize = 3000;
pub const RATE_TOL: f64 = 1e-9;
pub const RATE_INCLUSION: Inclusion = Inclusion {
    center: [0.3, 0.2],
    radius: 0.2,
    value: 2.0,
};

pub const CS_M_LIST: [usize; 4] = [16, 64, 256, 1024];
pub const CS_THRESHOLD: f64 = 1e-3;
/// Threshold used with the full-scale mesh.
pub const CS_THRESHOLD_FULL_SCALE: f64 = 5e-5;
pub const CS_LAMBDA: f64 = 1e-8;
pub const CS_MAX_ITERS: usize = 2000;
pub const CS_TOL: f64 = 1e-9;
pub const CS_RADII: [f64; 4] = [0.18, 0.21, 0.24, 0.27];
pub const CS_CENTER: [f64; 2] = [0.25, 0.1];
pub const CS_VALUE: f64 = 2.0;

pub const COMPARE_HEADERS: [&str; 11] = [
    "sample",
    "variant",
    "lambda",
    "psnr",
    "rel_err",
    "fn",
    "mask_cardinality",
    "iterations",
    "termination",
    "mu",
    "wall_time_s",
];
pub const RATE_HEADERS: [&str; 8] = ["delta", "lambda", "error", "rel_err", "iterations", "termination", "mu", "wall_time_s"];
pub const SWEEP_HEADERS: [&str; 7] = ["sample", "s", "m", "rel_err", "psnr", "iterations", "wall_time_s"];
pub const CURVE_HEADERS: [&str; 3] = ["sample", "s", "m_star"];
pub const GRID_HEADERS: [&str; 5] = ["lambda", "sample", "psnr", "rel_err", "iterations"];
pub const GRID_SUMMARY_HEADERS: [&str; 2] = ["lambda", "mean_psnr"];

/// Value written for an `m*` that was never reached.
pub const NOT_REACHED: &str = "not reached";

/// Iteration controls shared by every study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub rho: f64,
    pub exec: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            rho: DEFAULT_RHO,
            exec: Execution::default(),
        }
    }
}

impl RunOptions {
    pub fn new(max_iters: usize, tol: f64) -> Self {
        RunOptions {
            max_iters,
            tol,
            ..RunOptions::default()
        }
    }

    fn metadata(&self) -> serde_json::Value {
        json!({ "max_iters": self.max_iters, "tol": self.tol, "rho": self.rho })
    }
}

/// Forward model, protocol, reference conductivity and box.
#[derive(Clone)]
pub struct Problem<'a> {
    pub model: &'a ForwardModel,
    pub protocol: &'a Protocol,
    pub reference: Vec<f64>,
    pub bounds: Bounds,
}

impl<'a> Problem<'a> {
    /// Unit background and the default box.
    pub fn new(model: &'a ForwardModel, protocol: &'a Protocol) -> Self {
        Problem {
            model,
            protocol,
            reference: vec![1.0; model.n()],
            bounds: Bounds::default(),
        }
    }

    pub fn mesh(&self) -> &Mesh {
        self.model.mesh()
    }

    pub fn ideal_mask(&self, truth: &[f64]) -> Result<OracleMask> {
        let mesh = self.mesh();
        ideal_oracle(
            truth,
            &self.reference,
            support_tolerance(self.bounds.lower, self.bounds.upper),
            0,
            &mesh.vertex_adjacency()?,
            &mesh.digest(),
        )
    }

    /// One PGM run from the reference, with forward solves on the calling thread.
    pub fn solve(&self, data: &[f64], mask: Option<&OracleMask>, variant: Variant, lambda: f64, run: &RunOptions) -> Result<SolveReport> {
        self.solve_with(data, mask, variant, lambda, run, Execution::Sequential)
    }

    /// As [`Problem::solve`], with forward solves under `exec`.
    pub fn solve_with(
        &self,
        data: &[f64],
        mask: Option<&OracleMask>,
        variant: Variant,
        lambda: f64,
        run: &RunOptions,
        exec: Execution,
    ) -> Result<SolveReport> {
        let mut reg = RegularizerConfig::new(self.mesh(), variant.penalty(), self.reference.clone(), self.bounds)?;
        if variant.is_masked() {
            let mask = mask.ok_or_else(|| EitError::InvalidInput(format!("variant {variant} needs a mask")))?;
            reg = reg.with_mask(mask.clone())?;
        }
        let mut config = SolverConfig::new(variant, lambda);
        config.max_iters = run.max_iters;
        config.tol = run.tol;
        config.rho = run.rho;
        let ctx = ForwardContext::new(self.model, self.protocol, exec);
        run_pgm(&ctx, &self.reference, data, &config, &reg)
    }

    pub fn metadata(&self, experiment: &str) -> Metadata {
        let mesh = self.mesh();
        let mut meta = Metadata::new();
        meta.insert("experiment".into(), json!(experiment));
        meta.insert("mesh_digest".into(), json!(mesh.digest()));
        meta.insert("n".into(), json!(mesh.n_vertices()));
        meta.insert("electrodes".into(), json!(mesh.n_electrodes()));
        meta.insert("m".into(), json!(self.protocol.m()));
        meta.insert("protocol".into(), json!(self.protocol.kind));
        meta.insert("contact_impedance".into(), json!(self.model.contact_impedance()));
        meta.insert("potential_order".into(), json!(self.model.order()));
        meta.insert("bounds".into(), json!(self.bounds));
        meta.insert("reference".into(), json!(reference_summary(&self.reference)));
        meta
    }
}

fn reference_summary(reference: &[f64]) -> serde_json::Value {
    match reference.first() {
        Some(&v) if reference.iter().all(|&r| r == v) => json!(v),
        _ => json!(reference),
    }
}

/// One reconstruction input.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: usize,
    pub truth: Vec<f64>,
    pub data: Vec<f64>,
    /// Mask handed to masked variants.
    pub mask: Option<OracleMask>,
    /// Ideal mask, the reference for FN.
    pub ideal: Option<OracleMask>,
}

/// Measurements for a dataset sample at relative noise level `noise_level`.
///
/// The sample's own noise seed is reused, so the stored noisy array is
/// reproduced exactly when the level matches the dataset's.
pub fn sample_data(dataset: &Dataset, index: usize, clean: &[f64], noise_level: f64) -> Vec<f64> {
    if noise_level == 0.0 {
        return clean.to_vec();
    }
    let entry = &dataset.manifest.samples[index];
    add_noise(clean, noise_level, entry.seed, dataset.manifest.noise_scaling).noisy
}

/// Loads dataset samples as cases; masks come from `mask_dir` when given.
pub fn dataset_cases(dataset: &Dataset, indices: &[usize], noise_level: f64, mask_dir: Option<&Path>) -> Result<Vec<Case>> {
    indices
        .iter()
        .map(|&i| {
            let sample = dataset.load(i)?;
            let used = match mask_dir {
                Some(dir) => read_mask(dir.join(format!("{:04}.json", sample.id)), &dataset.mesh)?,
                None => sample.mask.clone(),
            };
            Ok(Case {
                id: sample.id,
                data: sample_data(dataset, i, &sample.clean, noise_level),
                truth: sample.sigma,
                mask: Some(used),
                ideal: Some(sample.mask),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantLambdas {
    pub l1: f64,
    pub tv: f64,
    pub l1_masked: f64,
    pub tv_masked: f64,
}

impl VariantLambdas {
    pub fn uniform(lambda: f64) -> Self {
        VariantLambdas {
            l1: lambda,
            tv: lambda,
            l1_masked: lambda,
            tv_masked: lambda,
        }
    }

    pub fn get(&self, variant: Variant) -> f64 {
        match variant {
            Variant::L1 => self.l1,
            Variant::Tv => self.tv,
            Variant::L1Masked => self.l1_masked,
            Variant::TvMasked => self.tv_masked,
        }
    }

    pub fn set(&mut self, variant: Variant, lambda: f64) {
        match variant {
            Variant::L1 => self.l1 = lambda,
            Variant::Tv => self.tv = lambda,
            Variant::L1Masked => self.l1_masked = lambda,
            Variant::TvMasked => self.tv_masked = lambda,
        }
    }
}

impl Default for VariantLambdas {
    /// Desk-scale values, chosen by grid search on noise-free phantoms.
    fn default() -> Self {
        VariantLambdas {
            l1: DESK_LAMBDA_L1,
            tv: DESK_LAMBDA_TV,
            l1_masked: DESK_LAMBDA_L1,
            tv_masked: DESK_LAMBDA_TV,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub sample: usize,
    pub variant: Variant,
    pub lambda: f64,
    pub psnr: f64,
    pub rel_err: f64,
    /// FN of the mask used; `None` for unmasked variants.
    pub fn_rate: Option<f64>,
    pub mask_cardinality: Option<usize>,
    pub iterations: usize,
    pub termination: Termination,
    pub mu: f64,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CompareResult {
    pub rows: Vec<CompareRow>,
    pub metadata: Metadata,
}

impl CompareResult {
    pub fn mean_psnr(&self, variant: Variant) -> f64 {
        mean(self.rows.iter().filter(|r| r.variant == variant).map(|r| r.psnr))
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&COMPARE_HEADERS);
        for r in &self.rows {
            t.push(vec![
                r.sample.to_string(),
                r.variant.to_string(),
                format_f64(r.lambda),
                format_f64(r.psnr),
                format_f64(r.rel_err),
                r.fn_rate.map(format_f64).unwrap_or_default(),
                r.mask_cardinality.map(|c| c.to_string()).unwrap_or_default(),
                r.iterations.to_string(),
                termination_name(r.termination).into(),
                format_f64(r.mu),
                format_f64(r.wall_time_s),
            ])
            .expect("row width matches headers");
        }
        t
    }
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max-iterations",
        Termination::Stalled => "stalled",
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs the given variants on every case; rows sorted by sample, then variant.
pub fn compare_cases(problem: &Problem<'_>, cases: &[Case], variants: &[Variant], lambdas: &VariantLambdas, run: &RunOptions) -> Result<Vec<CompareRow>> {
    let cells: Vec<(usize, Variant)> = (0..cases.len())
        .flat_map(|c| variants.iter().map(move |&v| (c, v)))
        .collect();
    let mut rows = par::try_map_indexed(run.exec, cells.len(), |k| -> Result<CompareRow> {
        let (c, variant) = cells[k];
        let case = &cases[c];
        let lambda = lambdas.get(variant);
        let start = Instant::now();
        let rep = problem.solve(&case.data, case.mask.as_ref(), variant, lambda, run)?;
        let wall_time_s = start.elapsed().as_secs_f64();
        let (fn_value, cardinality) = if variant.is_masked() {
            let used = case.mask.as_ref().expect("checked by solve");
            let fnr = case.ideal.as_ref().map(|ideal| fn_rate(used, ideal)).transpose()?;
            (fnr, Some(used.cardinality()))
        } else {
            (None, None)
        };
        Ok(CompareRow {
            sample: case.id,
            variant,
            lambda,
            psnr: psnr_max_peak(&rep.sigma, &case.truth),
            rel_err: rel_err(&rep.sigma, &case.truth),
            fn_rate: fn_value,
            mask_cardinality: cardinality,
            iterations: rep.iterations,
            termination: rep.termination,
            mu: rep.mu,
            wall_time_s,
            sigma: rep.sigma,
        })
    })?;
    rows.sort_by_key(|r| (r.sample, Variant::ALL.iter().position(|&v| v == r.variant)));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub lambdas: VariantLambdas,
    pub noise_level: f64,
    pub run: RunOptions,
    /// Sample indices; all samples when `None`.
    pub samples: Option<Vec<usize>>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            lambdas: VariantLambdas::default(),
            noise_level: 0.0,
            run: RunOptions::default(),
            samples: None,
        }
    }
}

/// All four variants on each dataset sample.
pub fn compare_variants(dataset: &Dataset, options: &CompareOptions, mask_dir: Option<&Path>) -> Result<CompareResult> {
    let indices: Vec<usize> = options.samples.clone().unwrap_or_else(|| (0..dataset.len()).collect());
    let cases = dataset_cases(dataset, &indices, options.noise_level, mask_dir)?;
    let model = ForwardModel::new(&dataset.mesh, dataset.manifest.potential_order, dataset.manifest.contact_impedance)?;
    let mut problem = Problem::new(&model, &dataset.protocol);
    problem.reference = vec![dataset.manifest.phantom.background; dataset.mesh.n_vertices()];
    problem.bounds = dataset.manifest.bounds;
    let rows = compare_cases(&problem, &cases, &Variant::ALL, &options.lambdas, &options.run)?;

    let mut meta = problem.metadata("compare");
    meta.insert("dataset".into(), json!(dataset.root.display().to_string()));
    meta.insert("protocol_digest".into(), json!(dataset.manifest.protocol_digest));
    meta.insert("master_seed".into(), json!(dataset.manifest.master_seed));
    meta.insert(
        "sample_seeds".into(),
        json!(indices.iter().map(|&i| dataset.manifest.samples[i].seed).collect::<Vec<_>>()),
    );
    meta.insert("noise_level".into(), json!(options.noise_level));
    meta.insert("noise_scaling".into(), json!(dataset.manifest.noise_scaling));
    meta.insert("lambdas".into(), json!(options.lambdas));
    meta.insert("solver".into(), options.run.metadata());
    meta.insert(
        "masks".into(),
        json!(mask_dir.map(|d| d.display().to_string()).unwrap_or_else(|| "ideal".into())),
    );
    let means: serde_json::Map<String, serde_json::Value> = Variant::ALL
        .iter()
        .map(|&v| (v.to_string(), json!(mean(rows.iter().filter(|r| r.variant == v).map(|r| r.psnr)))))
        .collect();
    meta.insert("mean_psnr".into(), serde_json::Value::Object(means));
    Ok(CompareResult { rows, metadata: meta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub variant: Variant,
    /// `λ = C δ`.
    pub c: f64,
    pub deltas: Vec<f64>,
    /// Seed of the fixed noise direction.
    pub direction_seed: u64,
    pub run: RunOptions,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            variant: Variant::TvMasked,
            c: RATE_C,
            deltas: RATE_DELTAS.to_vec(),
            direction_seed: RATE_DIRECTION_SEED,
            run: RunOptions::new(RATE_MAX_ITERS, RATE_TOL),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub delta: f64,
    pub lambda: f64,
    /// `‖σ̄ − σ†‖₂`
    pub error: f64,
    pub rel_err: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub mu: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RateResult {
    pub rows: Vec<RateRow>,
    pub slope: f64,
    pub intercept: f64,
    pub metadata: Metadata,
}

impl RateResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&RATE_HEADERS);
        for r in &self.rows {
            t.push(vec![
                format_f64(r.delta),
                format_f64(r.lambda),
                format_f64(r.error),
                format_f64(r.rel_err),
                r.iterations.to_string(),
                termination_name(r.termination).into(),
                format_f64(r.mu),
                format_f64(r.wall_time_s),
            ])
            .expect("row width matches headers");
        }
        t
    }
}

/// Least-squares line through `(log10 x, log10 y)`: `(slope, intercept)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EitError::InvalidInput("a log-log fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(EitError::InvalidInput("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.log10()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EitError::InvalidInput("log-log fit needs at least two distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Single circular inclusion used by the rate study.
pub fn rate_benchmark(mesh: &Mesh) -> Vec<f64> {
    rasterize(mesh, 1.0, &[RATE_INCLUSION])
}

/// Error against the noise norm `δ` with `λ = Cδ`, noise along a fixed direction.
pub fn convergence_rate_study(problem: &Problem<'_>, truth: &[f64], options: &RateOptions) -> Result<RateResult> {
    if !(options.c > 0.0 && options.c.is_finite()) {
        return Err(EitError::InvalidInput(format!("C must be positive, got {}", options.c)));
    }
    if options.deltas.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(EitError::InvalidInput("every δ must be positive".into()));
    }
    let lo = options.deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = options.deltas.iter().cloned().fold(0.0, f64::max);
    if options.deltas.is_empty() || hi < 100.0 * lo * (1.0 - 1e-12) {
        return Err(EitError::InvalidInput("the δ list must span at least two decades".into()));
    }
    let clean = ForwardContext::new(problem.model, problem.protocol, options.run.exec).phi(truth)?;
    let g = gaussian_direction(clean.len(), options.direction_seed);
    let gn = norm2(&g);
    let mask = if options.variant.is_masked() {
        Some(problem.ideal_mask(truth)?)
    } else {
        None
    };
    let truth_norm = norm2(truth);
    let rows = par::try_map_indexed(options.run.exec, options.deltas.len(), |k| -> Result<RateRow> {
        let delta = options.deltas[k];
        let lambda = options.c * delta;
        let data: Vec<f64> = clean.iter().zip(&g).map(|(v, gi)| v + delta * gi / gn).collect();
        let start = Instant::now();
        let rep = problem.solve(&data, mask.as_ref(), options.variant, lambda, &options.run)?;
        let wall_time_s = start.elapsed().as_secs_f64();
        let error = rep.sigma.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        Ok(RateRow {
            delta,
            lambda,
            error,
            rel_err: error / truth_norm,
            iterations: rep.iterations,
            termination: rep.termination,
            mu: rep.mu,
            wall_time_s,
        })
    })?;
    let (slope, intercept) = fit_loglog(
        &rows.iter().map(|r| r.delta).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.error).collect::<Vec<_>>(),
    )?;

    let mut meta = problem.metadata("rate");
    meta.insert("variant".into(), json!(options.variant));
    meta.insert("c".into(), json!(options.c));
    meta.insert("deltas".into(), json!(options.deltas));
    meta.insert("direction_seed".into(), json!(options.direction_seed));
    meta.insert("signal_norm".into(), json!(norm2(&clean)));
    meta.insert("solver".into(), options.run.metadata());
    meta.insert("slope".into(), json!(slope));
    meta.insert("intercept".into(), json!(intercept));
    if let Some(mask) = &mask {
        meta.insert("mask_cardinality".into(), json!(mask.cardinality()));
    }
    Ok(RateResult {
        rows,
        slope,
        intercept,
        metadata: meta,
    })
}

/// 32-electrode desk mesh used by the measurement-count sweep.
pub fn cs_mesh_spec() -> DiskMeshSpec {
    DiskMeshSpec::new(1.0, 1.0 / 13.0, 32, 0.5)
}

#[derive(Debug, Clone)]
pub struct CsSample {
    pub id: usize,
    pub truth: Vec<f64>,
}

/// One inclusion per sample with growing radius, hence growing support.
pub fn cs_benchmark_samples(mesh: &Mesh) -> Vec<CsSample> {
    cs_samples(mesh, &CS_RADII)
}

/// One sample per radius, each a single inclusion at the sweep centre.
pub fn cs_samples(mesh: &Mesh, radii: &[f64]) -> Vec<CsSample> {
    radii
        .iter()
        .enumerate()
        .map(|(id, &radius)| CsSample {
            id,
            truth: rasterize(
                mesh,
                1.0,
                &[Inclusion {
                    center: CS_CENTER,
                    radius,
                    value: CS_VALUE,
                }],
            ),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsOptions {
    pub variant: Variant,
    pub lambda: f64,
    pub m_list: Vec<usize>,
    pub threshold: f64,
    pub kind: ProtocolKind,
    pub run: RunOptions,
}

impl Default for CsOptions {
    fn default() -> Self {
        CsOptions {
            variant: Variant::TvMasked,
            lambda: CS_LAMBDA,
            m_list: CS_M_LIST.to_vec(),
            threshold: CS_THRESHOLD,
            kind: ProtocolKind::OppositeAdjacent,
            run: RunOptions::new(CS_MAX_ITERS, CS_TOL),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sample: usize,
    /// Support size `|supp(σ† − σ0)|`.
    pub s: usize,
    pub m: usize,
    pub rel_err: f64,
    pub psnr: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sample: usize,
    pub s: usize,
    /// `None` when no `m` in the list reaches the threshold.
    pub m_star: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub curve: Vec<CurvePoint>,
    pub metadata: Metadata,
}

impl SweepResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&SWEEP_HEADERS);
        for r in &self.rows {
            t.push(vec![
                r.sample.to_string(),
                r.s.to_string(),
                r.m.to_string(),
                format_f64(r.rel_err),
                format_f64(r.psnr),
                r.iterations.to_string(),
                format_f64(r.wall_time_s),
            ])
            .expect("row width matches headers");
        }
        t
    }

    pub fn curve_table(&self) -> Table {
        let mut t = Table::new(&CURVE_HEADERS);
        for c in &self.curve {
            t.push(vec![
                c.sample.to_string(),
                c.s.to_string(),
                c.m_star.map(format_f64).unwrap_or_else(|| NOT_REACHED.into()),
            ])
            .expect("row width matches headers");
        }
        t
    }

    /// One row per sample with a `rel_err` column per `m`.
    pub fn wide_table(&self) -> Table {
        let mut ms: Vec<usize> = self.rows.iter().map(|r| r.m).collect();
        ms.sort_unstable();
        ms.dedup();
        let mut headers = vec!["sample".to_string(), "s".to_string()];
        headers.extend(ms.iter().map(|m| format!("m{m}")));
        let mut t = Table { headers, rows: Vec::new() };
        let mut ids: Vec<usize> = self.rows.iter().map(|r| r.sample).collect();
        ids.dedup();
        for id in ids {
            let cells: Vec<&SweepRow> = self.rows.iter().filter(|r| r.sample == id).collect();
            let mut row = vec![id.to_string(), cells[0].s.to_string()];
            row.extend(ms.iter().map(|&m| {
                cells
                    .iter()
                    .find(|r| r.m == m)
                    .map(|r| format_f64(r.rel_err))
                    .unwrap_or_default()
            }));
            t.rows.push(row);
        }
        t
    }

    /// `rel_err` for one sample, in `m` order.
    pub fn errors(&self, sample: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.sample == sample).map(|r| r.rel_err).collect()
    }
}

/// Smallest `m` with `err ≤ threshold`, interpolating linearly in `log m`
/// between the bracketing list entries.
pub fn interpolate_m_star(ms: &[usize], errs: &[f64], threshold: f64) -> Option<f64> {
    let k = errs.iter().position(|&e| e <= threshold)?;
    if k == 0 || errs[k] == threshold {
        return Some(ms[k] as f64);
    }
    let (e0, e1) = (errs[k - 1], errs[k]);
    let (l0, l1) = ((ms[k - 1] as f64).ln(), (ms[k] as f64).ln());
    let t = (e0 - threshold) / (e0 - e1);
    Some((l0 + t * (l1 - l0)).exp())
}

/// Noise-free reconstructions for every `(sample, m)` pair.
pub fn cs_sweep(model: &ForwardModel, samples: &[CsSample], options: &CsOptions) -> Result<SweepResult> {
    if options.m_list.is_empty() || options.m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EitError::InvalidInput("m list must be nonempty and strictly increasing".into()));
    }
    if !(options.threshold > 0.0) {
        return Err(EitError::InvalidInput(format!("threshold must be positive, got {}", options.threshold)));
    }
    let p = model.n_electrodes();
    let protocols: Vec<Protocol> = options
        .m_list
        .iter()
        .map(|&m| Protocol::with_measurement_count(options.kind, p, m))
        .collect::<Result<_>>()?;
    let base = Problem::new(model, &protocols[0]);
    let masks: Vec<OracleMask> = samples.iter().map(|s| base.ideal_mask(&s.truth)).collect::<Result<_>>()?;
    let n_m = protocols.len();
    let rows = par::try_map_indexed(options.run.exec, samples.len() * n_m, |k| -> Result<SweepRow> {
        let (i, j) = (k / n_m, k % n_m);
        let sample = &samples[i];
        let problem = Problem::new(model, &protocols[j]);
        let data = ForwardContext::new(model, &protocols[j], Execution::Sequential).phi(&sample.truth)?;
        let start = Instant::now();
        let rep = problem.solve(&data, Some(&masks[i]), options.variant, options.lambda, &options.run)?;
        Ok(SweepRow {
            sample: sample.id,
            s: masks[i].cardinality(),
            m: options.m_list[j],
            rel_err: rel_err(&rep.sigma, &sample.truth),
            psnr: psnr_max_peak(&rep.sigma, &sample.truth),
            iterations: rep.iterations,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    })?;
    let mut curve: Vec<CurvePoint> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let errs: Vec<f64> = rows[i * n_m..(i + 1) * n_m].iter().map(|r| r.rel_err).collect();
            CurvePoint {
                sample: s.id,
                s: masks[i].cardinality(),
                m_star: interpolate_m_star(&options.m_list, &errs, options.threshold),
            }
        })
        .collect();
    curve.sort_by_key(|c| (c.s, c.sample));

    let mut meta = base.metadata("cs-sweep");
    meta.remove("m");
    meta.insert("m_list".into(), json!(options.m_list));
    meta.insert("protocol_nonuniform".into(), json!(protocols.iter().map(|p| p.nonuniform_stride).collect::<Vec<_>>()));
    meta.insert("variant".into(), json!(options.variant));
    meta.insert("lambda".into(), json!(options.lambda));
    meta.insert("rho".into(), json!(options.run.rho));
    meta.insert("noise_level".into(), json!(0.0));
    meta.insert("threshold".into(), json!(options.threshold));
    meta.insert("interpolation".into(), json!("linear in log m"));
    meta.insert("solver".into(), options.run.metadata());
    meta.insert("seeds".into(), json!([]));
    Ok(SweepResult { rows, curve, metadata: meta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub sample: usize,
    pub psnr: f64,
    pub rel_err: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub variant: Variant,
    pub best_lambda: f64,
    pub rows: Vec<GridRow>,
    /// `(λ, mean PSNR)` in grid order.
    pub means: Vec<(f64, f64)>,
    pub metadata: Metadata,
}

impl GridResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&GRID_HEADERS);
        for r in &self.rows {
            t.push(vec![
                format_f64(r.lambda),
                r.sample.to_string(),
                format_f64(r.psnr),
                format_f64(r.rel_err),
                r.iterations.to_string(),
            ])
            .expect("row width matches headers");
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&GRID_SUMMARY_HEADERS);
        for &(l, m) in &self.means {
            t.push(vec![format_f64(l), format_f64(m)]).expect("row width matches headers");
        }
        t
    }
}

/// λ maximising mean PSNR over the cases; ties go to the earlier grid entry.
pub fn lambda_grid_search(problem: &Problem<'_>, cases: &[Case], grid: &[f64], variant: Variant, run: &RunOptions) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(EitError::InvalidInput("λ grid is empty".into()));
    }
    if cases.is_empty() {
        return Err(EitError::InvalidInput("λ grid search needs at least one case".into()));
    }
    let n_c = cases.len();
    let rows = par::try_map_indexed(run.exec, grid.len() * n_c, |k| -> Result<GridRow> {
        let (g, c) = (k / n_c, k % n_c);
        let case = &cases[c];
        let rep = problem.solve(&case.data, case.mask.as_ref(), variant, grid[g], run)?;
        Ok(GridRow {
            lambda: grid[g],
            sample: case.id,
            psnr: psnr_max_peak(&rep.sigma, &case.truth),
            rel_err: rel_err(&rep.sigma, &case.truth),
            iterations: rep.iterations,
        })
    })?;
    let means: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, &l)| (l, mean(rows[g * n_c..(g + 1) * n_c].iter().map(|r| r.psnr))))
        .collect();
    let mut best = 0;
    for (g, &(_, m)) in means.iter().enumerate() {
        if m > means[best].1 {
            best = g;
        }
    }
    let best_lambda = means[best].0;

    let mut meta = problem.metadata("lambda-grid");
    meta.insert("variant".into(), json!(variant));
    meta.insert("grid".into(), json!(grid));
    meta.insert("samples".into(), json!(cases.iter().map(|c| c.id).collect::<Vec<_>>()));
    meta.insert("best_lambda".into(), json!(best_lambda));
    meta.insert("solver".into(), run.metadata());
    Ok(GridResult {
        variant,
        best_lambda,
        rows,
        means,
        metadata: meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m_star_interpolation() {
        let ms = [16, 64, 256, 1024];
        assert_eq!(interpolate_m_star(&ms, &[1e-4, 1e-5, 1e-6, 1e-7], 1e-3), Some(16.0));
        assert_eq!(interpolate_m_star(&ms, &[1.0, 0.5, 0.2, 0.1], 1e-3), None);
        let m = interpolate_m_star(&ms, &[1.0, 0.4, 0.2, 0.1], 0.3).unwrap();
        assert!((m - 128.0).abs() < 1e-9);
        assert_eq!(interpolate_m_star(&ms, &[1.0, 0.4, 0.3, 0.1], 0.3), Some(256.0));
    }

    #[test]
    fn loglog_fit_recovers_power_laws() {
        let xs = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 7.0 * x.sqrt()).collect();
        let (slope, intercept) = fit_loglog(&xs, &ys).unwrap();
        assert!((slope - 0.5).abs() < 1e-12);
        assert!((intercept - 7f64.log10()).abs() < 1e-12);
        assert!(fit_loglog(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_loglog(&[1.0, 2.0], &[0.0, 2.0]).is_err());
    }
}
