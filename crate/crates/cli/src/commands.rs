use std::path::{Path, PathBuf};

use eit_cs::dataset::{generate_dataset, Dataset, DatasetSpec};
use eit_cs::experiments::{
    compare_variants, convergence_rate_study, cs_mesh_spec, cs_samples, cs_sweep, dataset_cases, lambda_grid_search,
    rate_benchmark, CompareOptions, CsOptions, Problem, RateOptions, RunOptions, VariantLambdas, CS_LAMBDA,
    CS_MAX_ITERS, CS_M_LIST, CS_RADII, CS_THRESHOLD, CS_THRESHOLD_FULL_SCALE, CS_TOL, DESK_LAMBDA_L1,
    DESK_LAMBDA_TV, RATE_C, RATE_DELTAS, RATE_DIRECTION_SEED, RATE_MAX_ITERS, RATE_TOL,
};
use eit_cs::forward::DEFAULT_CONTACT_IMPEDANCE;
use eit_cs::io::{read_array, read_vertex_csv, write_array, write_vertex_csv};
use eit_cs::oracle::{fn_rate, ideal_oracle, read_mask, read_mask_unchecked, support_tolerance, write_mask};
use eit_cs::par::{self, Execution};
use eit_cs::pgm::{DEFAULT_MAX_ITERS, DEFAULT_RHO, DEFAULT_TOL};
use eit_cs::phantom::{generate_phantom, psnr_max_peak, rel_err, PhantomConfig};
use eit_cs::plot::{emit_plot, PlotKind, PlotSpec};
use eit_cs::protocol::{add_noise, NoiseScaling, SkipPolicy};
use eit_cs::table::{write_table, Metadata, Table};
use eit_cs::{Bounds, DiskMeshSpec, ForwardModel, Mesh, Penalty, PotentialOrder, Protocol, ProtocolKind, Variant};
use serde_json::{json, Map, Value};

use crate::config::{load_config_file, Resolver};
use crate::error::CliError;
use crate::{
    Cli, Command, CompareArgs, CsSweepArgs, DatasetGenArgs, ExperimentCommand, ForwardArgs, LambdaGridArgs, MeshArgs,
    MeshGenArgs, MetricsArgs, ModelArgs, OracleIdealArgs, RateArgs, ReconstructArgs, SolverArgs,
};

pub fn run(cli: Cli) -> Result<Value, CliError> {
    let file = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => Map::new(),
    };
    let mut r = Resolver::new(file);
    let threads = r.get_opt("threads", cli.threads)?;
    par::init_thread_pool(threads);
    let seed = cli.seed;
    match cli.command {
        Command::MeshGen(a) => mesh_gen(&mut r, a),
        Command::DatasetGen(a) => dataset_gen(&mut r, seed, a),
        Command::Forward(a) => forward(&mut r, seed, a),
        Command::Reconstruct(a) => reconstruct(&mut r, a),
        Command::OracleIdeal(a) => oracle_ideal(&mut r, a),
        Command::Experiment(ExperimentCommand::Compare(a)) => compare(&mut r, a),
        Command::Experiment(ExperimentCommand::Rate(a)) => rate(&mut r, seed, a),
        Command::Experiment(ExperimentCommand::CsSweep(a)) => sweep(&mut r, a),
        Command::Experiment(ExperimentCommand::LambdaGrid(a)) => lambda_grid(&mut r, a),
        Command::Metrics(a) => metrics(&mut r, a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn flag(on: bool) -> Option<bool> {
    on.then_some(true)
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse().map_err(|e: eit_cs::EitError| usage(e.to_string()))
}

fn parse_kebab<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| usage(format!("unknown {what} `{s}`")))
}

fn resolve_mesh(r: &mut Resolver, a: &MeshArgs, base: DiskMeshSpec) -> Result<Mesh, CliError> {
    if let Some(path) = r.get_opt::<PathBuf>("mesh", a.mesh.clone())? {
        return Ok(Mesh::read(path)?);
    }
    let full = r.get("full_scale", flag(a.full_scale), false)?;
    let base = if full { DiskMeshSpec::full_scale() } else { base };
    let spec = DiskMeshSpec {
        radius: r.get("radius", a.radius, base.radius)?,
        target_h: r.get("h", a.h, base.target_h)?,
        electrodes: r.get("electrodes", a.electrodes, base.electrodes)?,
        coverage: r.get("coverage", a.coverage, base.coverage)?,
        rotational_symmetry: r.get("rotational_symmetry", flag(a.rotational_symmetry), base.rotational_symmetry)?,
    };
    Ok(spec.build()?)
}

struct ModelSettings {
    order: PotentialOrder,
    z: f64,
    kind: ProtocolKind,
    skip: SkipPolicy,
}

fn resolve_model_settings(r: &mut Resolver, a: &ModelArgs) -> Result<ModelSettings, CliError> {
    let degree = r.get("order", a.order, 1u32)?;
    let order = PotentialOrder::from_degree(degree).map_err(|e| usage(e.to_string()))?;
    let z = r.get("z", a.z, DEFAULT_CONTACT_IMPEDANCE)?;
    let kind: String = r.get("protocol", a.protocol.clone(), "opposite-adjacent".into())?;
    let kind: ProtocolKind = kind.parse().map_err(|e: eit_cs::EitError| usage(e.to_string()))?;
    let skip: String = r.get("skip", a.skip.clone(), "none".into())?;
    let skip = parse_kebab("skip policy", &skip)?;
    Ok(ModelSettings { order, z, kind, skip })
}

fn resolve_run(r: &mut Resolver, a: &SolverArgs, max_iters: usize, tol: f64) -> Result<RunOptions, CliError> {
    Ok(RunOptions {
        max_iters: r.get("max_iters", a.max_iters, max_iters)?,
        tol: r.get("tol", a.tol, tol)?,
        rho: r.get("rho", a.rho, DEFAULT_RHO)?,
        exec: Execution::default(),
    })
}

fn resolve_scaling(r: &mut Resolver, s: &Option<String>) -> Result<NoiseScaling, CliError> {
    let v: String = r.get("noise_scaling", s.clone(), "per-component".into())?;
    parse_kebab("noise scaling", &v)
}

fn read_field(path: &Path) -> Result<Vec<f64>, CliError> {
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_vertex_csv(path)?,
        _ => read_array(path)?,
    })
}

fn read_measurements(path: &Path) -> Result<Vec<f64>, CliError> {
    if path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return Ok(read_array(path)?);
    }
    let table = Table::read_csv(path)?;
    let column = if table.column_index("noisy").is_ok() { "noisy" } else { "value" };
    let values = table.column_f64(column)?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(usage(format!("{} has non-numeric `{column}` entries", path.display())));
    }
    Ok(values)
}

fn with_config(mut meta: Metadata, config: &Map<String, Value>) -> Metadata {
    meta.insert("config".into(), Value::Object(config.clone()));
    meta.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    meta
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn mesh_gen(r: &mut Resolver, a: MeshGenArgs) -> Result<Value, CliError> {
    let mesh = resolve_mesh(r, &a.mesh, DiskMeshSpec::desk())?;
    let out: PathBuf = r.output("out", a.out, "mesh.json".into())?;
    let config = r.finish()?;
    mesh.write(&out)?;
    Ok(json!({
        "mesh": path_str(&out),
        "n": mesh.n_vertices(),
        "triangles": mesh.n_triangles(),
        "electrodes": mesh.n_electrodes(),
        "digest": mesh.digest(),
        "config": config,
    }))
}

fn dataset_gen(r: &mut Resolver, seed: Option<u64>, a: DatasetGenArgs) -> Result<Value, CliError> {
    let seed = r.get("seed", seed, 0u64)?;
    let mesh = resolve_mesh(r, &a.mesh, DiskMeshSpec::desk())?;
    let ms = resolve_model_settings(r, &a.model)?;
    let mut spec = DatasetSpec::new(r.get("n_samples", a.n_samples, 10usize)?, r.get("noise_level", a.noise_level, 0.0)?, seed);
    spec.noise_scaling = resolve_scaling(r, &a.noise_scaling)?;
    spec.mask_dilation = r.get("dilation", a.dilation, 0usize)?;
    spec.potential_order = ms.order;
    spec.contact_impedance = ms.z;
    let out: PathBuf = r.output("out", a.out, "dataset".into())?;
    let config = r.finish()?;
    let protocol = Protocol::full(ms.kind, mesh.n_electrodes())?.with_skip(ms.skip);
    let manifest = generate_dataset(&out, &mesh, &protocol, &spec, Execution::default())?;
    std::fs::write(
        out.join("resolved_config.json"),
        serde_json::to_string_pretty(&with_config(Metadata::new(), &config))?,
    )?;
    Ok(json!({
        "dataset": path_str(&out),
        "samples": manifest.samples.len(),
        "n": manifest.n,
        "m": manifest.m,
        "mesh_digest": manifest.mesh_digest,
        "config": config,
    }))
}

fn forward(r: &mut Resolver, seed: Option<u64>, a: ForwardArgs) -> Result<Value, CliError> {
    let seed = r.get("seed", seed, 0u64)?;
    let mesh = resolve_mesh(r, &a.mesh, DiskMeshSpec::desk())?;
    let ms = resolve_model_settings(r, &a.model)?;
    let sigma_path = r.get_opt::<PathBuf>("sigma", a.sigma)?;
    let noise_level = r.get("noise_level", a.noise_level, 0.0)?;
    let scaling = resolve_scaling(r, &a.noise_scaling)?;
    let out: PathBuf = r.output("out", a.out, "forward".into())?;
    let config = r.finish()?;

    let (sigma, generated) = match &sigma_path {
        Some(p) => (read_field(p)?, false),
        None => (generate_phantom(&mesh, &PhantomConfig::default(), seed)?.sigma, true),
    };
    let protocol = Protocol::full(ms.kind, mesh.n_electrodes())?.with_skip(ms.skip);
    let model = ForwardModel::new(&mesh, ms.order, ms.z)?;
    let clean = model.apply_phi(&sigma, &protocol, Execution::default())?;
    let draw = add_noise(&clean, noise_level, seed, scaling);

    create_dir(&out)?;
    let mut table = Table::new(&["measurement", "injection_source", "injection_sink", "measure_high", "measure_low", "clean", "noisy"]);
    for (k, (c, v)) in protocol.pairs().into_iter().enumerate() {
        let inj = protocol.injections[c];
        let meas = protocol.measurements[v];
        table.push(vec![
            k.to_string(),
            inj[0].to_string(),
            inj[1].to_string(),
            meas[0].to_string(),
            meas[1].to_string(),
            eit_cs::io::format_f64(clean[k]),
            eit_cs::io::format_f64(draw.noisy[k]),
        ])?;
    }
    let mut meta = Metadata::new();
    meta.insert("mesh_digest".into(), json!(mesh.digest()));
    meta.insert("m".into(), json!(protocol.m()));
    meta.insert("seed".into(), json!(seed));
    meta.insert("delta".into(), json!(draw.delta));
    meta.insert("snr_db".into(), json!(draw.snr_db.is_finite().then_some(draw.snr_db)));
    let csv = out.join("measurements.csv");
    write_table(&table, &with_config(meta, &config), &csv)?;
    protocol.write(out.join("protocol.json"))?;
    let mut written = vec![path_str(&csv), path_str(&out.join("protocol.json"))];
    if generated {
        let p = out.join("sigma.csv");
        write_vertex_csv(&p, &sigma)?;
        written.push(path_str(&p));
    }
    Ok(json!({
        "written": written,
        "m": protocol.m(),
        "delta": draw.delta,
        "config": config,
    }))
}

fn reconstruct(r: &mut Resolver, a: ReconstructArgs) -> Result<Value, CliError> {
    let dataset_dir = r.get_opt::<PathBuf>("dataset", a.dataset.clone())?;
    let variant: String = r.get("variant", a.variant.clone(), "pgm-tv".into())?;
    let variant = parse_variant(&variant)?;
    let default_lambda = match variant.penalty() {
        Penalty::Tv => DESK_LAMBDA_TV,
        Penalty::L1 => DESK_LAMBDA_L1,
    };
    let lambda = r.get("lambda", a.lambda, default_lambda)?;
    let mask_path = r.get_opt::<PathBuf>("mask", a.mask.clone())?;
    let run = resolve_run(r, &a.solver, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;

    // Either a dataset sample or explicit mesh, protocol and data files.
    let (mesh, protocol, model_order, z, data, truth, reference, bounds, default_mask);
    if let Some(dir) = &dataset_dir {
        let index = r.require::<usize>("sample", a.sample)?;
        let clean = r.get("clean", flag(a.clean), false)?;
        let ds = Dataset::open(dir)?;
        let sample = ds.load(index)?;
        data = if clean { sample.clean } else { sample.noisy };
        truth = Some(sample.sigma);
        default_mask = Some(sample.mask);
        reference = vec![ds.manifest.phantom.background; ds.mesh.n_vertices()];
        bounds = ds.manifest.bounds;
        model_order = ds.manifest.potential_order;
        z = ds.manifest.contact_impedance;
        mesh = ds.mesh;
        protocol = ds.protocol;
    } else {
        mesh = resolve_mesh(r, &a.mesh, DiskMeshSpec::desk())?;
        let ms = resolve_model_settings(r, &a.model)?;
        protocol = match r.get_opt::<PathBuf>("protocol_file", a.protocol_file.clone())? {
            Some(p) => Protocol::read(p)?,
            None => Protocol::full(ms.kind, mesh.n_electrodes())?.with_skip(ms.skip),
        };
        let data_path = r.require::<PathBuf>("data", a.data.clone())?;
        data = read_measurements(&data_path)?;
        truth = r.get_opt::<PathBuf>("truth", a.truth.clone())?.map(|p| read_field(&p)).transpose()?;
        default_mask = None;
        reference = vec![1.0; mesh.n_vertices()];
        bounds = Bounds::default();
        model_order = ms.order;
        z = ms.z;
    }
    let out: PathBuf = r.output("out", a.out, "reconstruction".into())?;
    let config = r.finish()?;

    let mask = match &mask_path {
        Some(p) => Some(read_mask(p, &mesh)?),
        None => default_mask,
    };
    if variant.is_masked() && mask.is_none() {
        return Err(usage(format!("variant {variant} needs --mask")));
    }
    let model = ForwardModel::new(&mesh, model_order, z)?;
    let problem = Problem {
        model: &model,
        protocol: &protocol,
        reference,
        bounds,
    };
    let used_mask = if variant.is_masked() { mask.as_ref() } else { None };
    let report = problem.solve_with(&data, used_mask, variant, lambda, &run, Execution::default())?;

    create_dir(&out)?;
    let mut meta = problem.metadata("reconstruct");
    meta.insert("variant".into(), json!(variant));
    meta.insert("lambda".into(), json!(lambda));
    meta.insert("mu".into(), json!(report.mu));
    meta.insert("iterations".into(), json!(report.iterations));
    meta.insert("termination".into(), json!(report.termination));
    if let Some(t) = &truth {
        meta.insert("psnr".into(), json!(psnr_max_peak(&report.sigma, t)));
        meta.insert("rel_err".into(), json!(rel_err(&report.sigma, t)));
    }
    if let (Some(used), Some(dir), Some(idx)) = (used_mask, &dataset_dir, a.sample) {
        let ideal = Dataset::open(dir)?.load(idx)?.mask;
        meta.insert("fn".into(), json!(fn_rate(used, &ideal)?));
    }
    let meta = with_config(meta, &config);
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("report.meta.json"), serde_json::to_string_pretty(&meta)?)?;
    write_vertex_csv(out.join("sigma.csv"), &report.sigma)?;
    write_array(out.join("sigma.eitb"), &report.sigma)?;
    Ok(json!({
        "report": path_str(&out.join("report.json")),
        "field": path_str(&out.join("sigma.csv")),
        "iterations": report.iterations,
        "termination": report.termination,
        "objective": report.objective.last(),
        "psnr": meta.get("psnr"),
        "rel_err": meta.get("rel_err"),
        "config": config,
    }))
}

fn oracle_ideal(r: &mut Resolver, a: OracleIdealArgs) -> Result<Value, CliError> {
    let mesh = resolve_mesh(r, &a.mesh, DiskMeshSpec::desk())?;
    let sigma_path = r.require::<PathBuf>("sigma", a.sigma)?;
    let background = r.get("background", a.background, 1.0)?;
    let b = Bounds::default();
    let tol = r.get("tol", a.tol, support_tolerance(b.lower, b.upper))?;
    let hops = r.get("hops", a.hops, 0usize)?;
    let out: PathBuf = r.output("out", a.out, "mask.json".into())?;
    let _config = r.finish()?;
    let sigma = read_field(&sigma_path)?;
    let reference = vec![background; mesh.n_vertices()];
    let mask = ideal_oracle(&sigma, &reference, tol, hops, &mesh.vertex_adjacency()?, &mesh.digest())?;
    write_mask(&mask, &out)?;
    Ok(json!({
        "mask": path_str(&out),
        "cardinality": mask.cardinality(),
        "n": mask.len(),
        "mesh_digest": mask.mesh_digest,
    }))
}

fn compare(r: &mut Resolver, a: CompareArgs) -> Result<Value, CliError> {
    let dir = r.require::<PathBuf>("dataset", a.dataset)?;
    let masks = r.get_opt::<PathBuf>("masks", a.masks)?;
    let d = VariantLambdas::default();
    let lambdas = VariantLambdas {
        l1: r.get("lambda_l1", a.lambda_l1, d.l1)?,
        tv: r.get("lambda_tv", a.lambda_tv, d.tv)?,
        l1_masked: r.get("lambda_l1_mo", a.lambda_l1_mo, d.l1_masked)?,
        tv_masked: r.get("lambda_tv_mo", a.lambda_tv_mo, d.tv_masked)?,
    };
    let options = CompareOptions {
        lambdas,
        noise_level: r.get("noise_level", a.noise_level, 0.0)?,
        run: resolve_run(r, &a.solver, DEFAULT_MAX_ITERS, DEFAULT_TOL)?,
        samples: r.get_opt("samples", a.samples)?,
    };
    let out: PathBuf = r.output("out", a.out, "compare".into())?;
    let config = r.finish()?;
    let ds = Dataset::open(&dir)?;
    let result = compare_variants(&ds, &options, masks.as_deref())?;
    create_dir(&out)?;
    let table = result.table();
    let meta = with_config(result.metadata.clone(), &config);
    write_table(&table, &meta, out.join("compare.csv"))?;
    emit_plot(
        &table,
        &PlotSpec::new(PlotKind::Line, "PSNR per sample", "sample", "psnr").grouped_by("variant"),
        out.join("compare.svg"),
    )?;
    Ok(json!({
        "table": path_str(&out.join("compare.csv")),
        "mean_psnr": meta.get("mean_psnr"),
        "config": config,
    }))
}

fn rate(r: &mut Resolver, seed: Option<u64>, a: RateArgs) -> Result<Value, CliError> {
    let seed = r.get("seed", seed, RATE_DIRECTION_SEED)?;
    let mesh = resolve_mesh(r, &a.mesh, DiskMeshSpec::desk())?;
    let ms = resolve_model_settings(r, &a.model)?;
    let variant: String = r.get("variant", a.variant, "pgm-tv-mo".into())?;
    let options = RateOptions {
        variant: parse_variant(&variant)?,
        c: r.get("c", a.c, RATE_C)?,
        deltas: r.get("deltas", a.deltas, RATE_DELTAS.to_vec())?,
        direction_seed: seed,
        run: resolve_run(r, &a.solver, RATE_MAX_ITERS, RATE_TOL)?,
    };
    let out: PathBuf = r.output("out", a.out, "rate".into())?;
    let config = r.finish()?;
    let protocol = Protocol::full(ms.kind, mesh.n_electrodes())?.with_skip(ms.skip);
    let model = ForwardModel::new(&mesh, ms.order, ms.z)?;
    let problem = Problem::new(&model, &protocol);
    let truth = rate_benchmark(&mesh);
    let result = convergence_rate_study(&problem, &truth, &options)?;
    create_dir(&out)?;
    let table = result.table();
    write_table(&table, &with_config(result.metadata.clone(), &config), out.join("rate.csv"))?;
    emit_plot(
        &table,
        &PlotSpec::new(PlotKind::LogLog, "Reconstruction error against noise", "delta", "error")
            .annotated(format!("slope = {:.3}", result.slope)),
        out.join("rate.svg"),
    )?;
    Ok(json!({
        "table": path_str(&out.join("rate.csv")),
        "slope": result.slope,
        "config": config,
    }))
}

fn sweep(r: &mut Resolver, a: CsSweepArgs) -> Result<Value, CliError> {
    let full = a.mesh.full_scale || full_scale_from_file(r)?;
    let mesh = resolve_mesh(r, &a.mesh, cs_mesh_spec())?;
    let ms = resolve_model_settings(r, &a.model)?;
    let variant: String = r.get("variant", a.variant, "pgm-tv-mo".into())?;
    let default_threshold = if full { CS_THRESHOLD_FULL_SCALE } else { CS_THRESHOLD };
    let options = CsOptions {
        variant: parse_variant(&variant)?,
        lambda: r.get("lambda", a.lambda, CS_LAMBDA)?,
        m_list: r.get("m", a.m_list, CS_M_LIST.to_vec())?,
        threshold: r.get("threshold", a.threshold, default_threshold)?,
        kind: ms.kind,
        run: resolve_run(r, &a.solver, CS_MAX_ITERS, CS_TOL)?,
    };
    let radii = r.get("radii", a.radii, CS_RADII.to_vec())?;
    let out: PathBuf = r.output("out", a.out, "cs_sweep".into())?;
    let config = r.finish()?;
    let model = ForwardModel::new(&mesh, ms.order, ms.z)?;
    let result = cs_sweep(&model, &cs_samples(&mesh, &radii), &options)?;
    create_dir(&out)?;
    let meta = with_config(result.metadata.clone(), &config);
    let table = result.table();
    write_table(&table, &meta, out.join("cs_sweep.csv"))?;
    write_table(&result.wide_table(), &meta, out.join("cs_sweep_wide.csv"))?;
    let curve = result.curve_table();
    write_table(&curve, &meta, out.join("cs_curve.csv"))?;
    emit_plot(
        &table,
        &PlotSpec::new(PlotKind::LogLog, "Relative error against measurements", "m", "rel_err").grouped_by("s"),
        out.join("cs_sweep.svg"),
    )?;
    emit_plot(
        &curve,
        &PlotSpec::new(PlotKind::Line, "Measurements needed against support size", "s", "m_star"),
        out.join("cs_curve.svg"),
    )?;
    Ok(json!({
        "table": path_str(&out.join("cs_sweep.csv")),
        "curve": result.curve,
        "config": config,
    }))
}

/// The full-scale switch changes the default threshold, so it may come from the file.
fn full_scale_from_file(r: &mut Resolver) -> Result<bool, CliError> {
    Ok(r.get_opt::<bool>("full_scale", None)?.unwrap_or(false))
}

fn lambda_grid(r: &mut Resolver, a: LambdaGridArgs) -> Result<Value, CliError> {
    let dir = r.require::<PathBuf>("dataset", a.dataset)?;
    let grid = r.get("grid", a.grid, vec![1e-10, 1e-9, 1e-8, 1e-7, 1e-6])?;
    let variant: String = r.get("variant", a.variant, "pgm-tv-mo".into())?;
    let variant = parse_variant(&variant)?;
    let samples = r.get_opt::<Vec<usize>>("samples", a.samples)?;
    let noise_level = r.get("noise_level", a.noise_level, 0.0)?;
    let masks = r.get_opt::<PathBuf>("masks", a.masks)?;
    let run = resolve_run(r, &a.solver, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let out: PathBuf = r.output("out", a.out, "lambda_grid".into())?;
    let config = r.finish()?;
    if grid.is_empty() {
        return Err(usage("--grid needs at least one value"));
    }
    let ds = Dataset::open(&dir)?;
    let indices = samples.unwrap_or_else(|| {
        let v = ds.manifest.split.validation.clone();
        if v.is_empty() {
            (0..ds.len()).collect()
        } else {
            v
        }
    });
    let cases = dataset_cases(&ds, &indices, noise_level, masks.as_deref())?;
    let model = ForwardModel::new(&ds.mesh, ds.manifest.potential_order, ds.manifest.contact_impedance)?;
    let mut problem = Problem::new(&model, &ds.protocol);
    problem.reference = vec![ds.manifest.phantom.background; ds.mesh.n_vertices()];
    problem.bounds = ds.manifest.bounds;
    let result = lambda_grid_search(&problem, &cases, &grid, variant, &run)?;
    create_dir(&out)?;
    let meta = with_config(result.metadata.clone(), &config);
    write_table(&result.table(), &meta, out.join("lambda_grid.csv"))?;
    let summary = result.summary_table();
    write_table(&summary, &meta, out.join("lambda_grid_summary.csv"))?;
    emit_plot(
        &summary,
        &PlotSpec::new(PlotKind::LogLog, "Mean PSNR against lambda", "lambda", "mean_psnr"),
        out.join("lambda_grid.svg"),
    )?;
    Ok(json!({
        "table": path_str(&out.join("lambda_grid.csv")),
        "best_lambda": result.best_lambda,
        "config": config,
    }))
}

fn metrics(r: &mut Resolver, a: MetricsArgs) -> Result<Value, CliError> {
    let truth = r.get_opt::<PathBuf>("truth", a.truth)?;
    let rec = r.get_opt::<PathBuf>("reconstruction", a.reconstruction)?;
    let pred = r.get_opt::<PathBuf>("predicted_mask", a.predicted_mask)?;
    let true_mask = r.get_opt::<PathBuf>("true_mask", a.true_mask)?;
    let config = r.finish()?;
    let mut out = Map::new();
    match (&truth, &rec) {
        (Some(t), Some(x)) => {
            let t = read_field(t)?;
            let x = read_field(x)?;
            if t.len() != x.len() {
                return Err(usage("truth and reconstruction have different lengths"));
            }
            out.insert("psnr".into(), json!(psnr_max_peak(&x, &t)));
            out.insert("rel_err".into(), json!(rel_err(&x, &t)));
        }
        (None, None) => {}
        _ => return Err(usage("--truth and --reconstruction go together")),
    }
    match (&pred, &true_mask) {
        (Some(p), Some(t)) => {
            let p = read_mask_unchecked(p)?;
            let t = read_mask_unchecked(t)?;
            out.insert("fn".into(), json!(fn_rate(&p, &t)?));
            out.insert("predicted_cardinality".into(), json!(p.cardinality()));
            out.insert("true_cardinality".into(), json!(t.cardinality()));
        }
        (None, None) => {}
        _ => return Err(usage("--predicted-mask and --true-mask go together")),
    }
    if out.is_empty() {
        return Err(usage("nothing to score: pass --truth/--reconstruction or --predicted-mask/--true-mask"));
    }
    out.insert("config".into(), Value::Object(config));
    Ok(Value::Object(out))
}
