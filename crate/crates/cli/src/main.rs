mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "eit-cs", version, about = "Sparsity-regularised EIT reconstruction with oracle masks")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (falls back to EIT_CS_THREADS, then to all cores).
    #[arg(long, global = true, env = "EIT_CS_THREADS")]
    pub threads: Option<usize>,

    /// TOML or JSON file of settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a disk mesh and write it as JSON.
    MeshGen(MeshGenArgs),
    /// Generate phantoms, measurements and ideal masks.
    DatasetGen(DatasetGenArgs),
    /// Simulate electrode measurements for a conductivity field.
    Forward(ForwardArgs),
    /// Run one PGM reconstruction.
    Reconstruct(ReconstructArgs),
    /// Write the ideal support mask of a conductivity field.
    OracleIdeal(OracleIdealArgs),
    /// Run one of the studies.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// PSNR, relative error and FN of existing files.
    Metrics(MetricsArgs),
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// All four variants on every dataset sample.
    Compare(CompareArgs),
    /// Error against noise level with λ = Cδ.
    Rate(RateArgs),
    /// Relative error against the number of measurements.
    CsSweep(CsSweepArgs),
    /// Pick λ by mean PSNR over dataset samples.
    LambdaGrid(LambdaGridArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct MeshArgs {
    /// Existing mesh JSON; overrides the generator settings.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Target edge length.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub electrodes: Option<usize>,
    /// Fraction of the boundary covered by electrodes.
    #[arg(long)]
    pub coverage: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Start from the 32-electrode, ~1600-vertex mesh instead of the desk mesh.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub rotational_symmetry: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Potential element degree: 1 or 2.
    #[arg(long)]
    pub order: Option<u32>,
    /// Contact impedance.
    #[arg(long)]
    pub z: Option<f64>,
    /// opposite-adjacent or adjacent-adjacent.
    #[arg(long)]
    pub protocol: Option<String>,
    /// none, same-pair or any-injecting.
    #[arg(long)]
    pub skip: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MeshGenArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetGenArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Relative noise level δ̄.
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// per-component or normalized.
    #[arg(long)]
    pub noise_scaling: Option<String>,
    /// Graph hops added around each ideal mask.
    #[arg(long)]
    pub dilation: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Conductivity (.csv or .eitb); a random phantom when absent.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub noise_scaling: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Dataset directory; with --sample supplies mesh, protocol, data and truth.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<usize>,
    /// Use the noise-free measurements of the dataset sample.
    #[arg(long)]
    pub clean: bool,
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Protocol JSON, used with --data.
    #[arg(long)]
    pub protocol_file: Option<PathBuf>,
    /// Measurements (.eitb, or .csv with a `noisy` or `value` column).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ground truth for metrics (.csv or .eitb).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleIdealArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    /// Conductivity (.csv or .eitb).
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Constant background conductivity.
    #[arg(long)]
    pub background: Option<f64>,
    /// Support tolerance; defaults to 1e-6 of the box width.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory of NNNN.json masks replacing the dataset's ideal masks.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub lambda_tv: Option<f64>,
    #[arg(long)]
    pub lambda_l1_mo: Option<f64>,
    #[arg(long)]
    pub lambda_tv_mo: Option<f64>,
    /// Sample indices; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub variant: Option<String>,
    /// λ = C δ.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CsSweepArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Measurement counts; each must be a perfect square.
    #[arg(long = "m", value_delimiter = ',')]
    pub m_list: Option<Vec<usize>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Inclusion radii, one sample each.
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LambdaGridArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub variant: Option<String>,
    /// Sample indices; the validation split when absent.
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Ground-truth field (.csv or .eitb).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Reconstructed field (.csv or .eitb).
    #[arg(long)]
    pub reconstruction: Option<PathBuf>,
    /// Predicted mask JSON, scored against --true-mask.
    #[arg(long)]
    pub predicted_mask: Option<PathBuf>,
    #[arg(long)]
    pub true_mask: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(summary) => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
