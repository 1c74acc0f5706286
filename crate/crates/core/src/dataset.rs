//! On-disk datasets of phantoms, measurements and ideal masks.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/mesh.json
//! <dir>/protocol.json
//! <dir>/samples/NNNN.sigma.eitb   ground-truth conductivity, one value per vertex
//! <dir>/samples/NNNN.clean.eitb   Φ(σ†)
//! <dir>/samples/NNNN.noisy.eitb   Φ(σ†) + η
//! <dir>/masks/NNNN.json           ideal support mask
//! ```

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conductivity::Bounds;
use crate::error::{EitError, Result};
use crate::forward::{ForwardModel, PotentialOrder};
use crate::io::{file_digest, read_array, write_array};
use crate::mesh::Mesh;
use crate::oracle::{ideal_oracle, read_mask, support_tolerance, write_mask, OracleMask};
use crate::par::{self, Execution};
use crate::phantom::{generate_phantom_with, Inclusion, PhantomConfig};
use crate::protocol::{add_noise, NoiseScaling, Protocol, SkipPolicy};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDigests {
    pub sigma: String,
    pub clean: String,
    pub noisy: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub sigma: String,
    pub clean: String,
    pub noisy: String,
    pub mask: String,
    /// Seed of the noise draw; the phantom comes from stream `id` of the master seed.
    pub seed: u64,
    pub noise_level: f64,
    pub delta: f64,
    /// `None` for noise-free data.
    pub snr_db: Option<f64>,
    pub inclusions: Vec<Inclusion>,
    pub digests: SampleDigests,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Contiguous 70/15/15 partition of `0..n`.
    pub fn contiguous(n: usize) -> Self {
        let n_train = (SPLIT_FRACTIONS.0 * n as f64).round() as usize;
        let n_val = ((SPLIT_FRACTIONS.1 * n as f64).round() as usize).min(n - n_train);
        Split {
            train: (0..n_train).collect(),
            validation: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub mesh: String,
    pub mesh_digest: String,
    pub protocol: String,
    pub protocol_digest: String,
    pub skip: SkipPolicy,
    pub m: usize,
    pub n: usize,
    pub contact_impedance: f64,
    pub potential_order: PotentialOrder,
    pub noise_level: f64,
    pub noise_scaling: NoiseScaling,
    pub master_seed: u64,
    pub phantom: PhantomConfig,
    pub bounds: Bounds,
    pub mask_tolerance: f64,
    pub mask_dilation: usize,
    pub split: Split,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub phantom: PhantomConfig,
    pub noise_level: f64,
    pub noise_scaling: NoiseScaling,
    pub master_seed: u64,
    pub contact_impedance: f64,
    pub potential_order: PotentialOrder,
    pub bounds: Bounds,
    pub mask_dilation: usize,
}

impl DatasetSpec {
    pub fn new(n_samples: usize, noise_level: f64, master_seed: u64) -> Self {
        DatasetSpec {
            n_samples,
            phantom: PhantomConfig::default(),
            noise_level,
            noise_scaling: NoiseScaling::default(),
            master_seed,
            contact_impedance: crate::forward::DEFAULT_CONTACT_IMPEDANCE,
            potential_order: PotentialOrder::default(),
            bounds: Bounds::default(),
            mask_dilation: 0,
        }
    }
}

/// Per-sample generator: stream `index` of the master seed.
pub fn sample_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

fn sample_paths(id: usize) -> [String; 4] {
    [
        format!("samples/{id:04}.sigma.eitb"),
        format!("samples/{id:04}.clean.eitb"),
        format!("samples/{id:04}.noisy.eitb"),
        format!("masks/{id:04}.json"),
    ]
}

pub fn generate_dataset(
    dir: impl AsRef<Path>,
    mesh: &Mesh,
    protocol: &Protocol,
    spec: &DatasetSpec,
    exec: Execution,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    spec.phantom.validate()?;
    if !(spec.noise_level >= 0.0) {
        return Err(EitError::InvalidInput(format!("noise level must be nonnegative, got {}", spec.noise_level)));
    }
    let (lo, hi) = spec.phantom.value_envelope();
    if !(spec.bounds.contains(lo) && spec.bounds.contains(hi)) {
        return Err(EitError::InvalidInput("phantom values do not fit inside the conductivity box".into()));
    }
    let model = ForwardModel::new(mesh, spec.potential_order, spec.contact_impedance)?;
    let adjacency = mesh.vertex_adjacency()?;
    let digest = mesh.digest();
    std::fs::create_dir_all(dir.join("samples"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    mesh.write(dir.join("mesh.json"))?;
    protocol.write(dir.join("protocol.json"))?;
    let tol = support_tolerance(spec.bounds.lower, spec.bounds.upper);
    let reference = vec![spec.phantom.background; mesh.n_vertices()];

    let samples = par::try_map_indexed(exec, spec.n_samples, |id| -> Result<SampleEntry> {
        let mut rng = sample_rng(spec.master_seed, id);
        let phantom = generate_phantom_with(mesh, &spec.phantom, &mut rng)?;
        let seed = rng.next_u64();
        let clean = model.apply_phi(&phantom.sigma, protocol, Execution::Sequential)?;
        let draw = add_noise(&clean, spec.noise_level, seed, spec.noise_scaling);
        let mask = ideal_oracle(&phantom.sigma, &reference, tol, spec.mask_dilation, &adjacency, &digest)?;
        let paths = sample_paths(id);
        write_array(dir.join(&paths[0]), &phantom.sigma)?;
        write_array(dir.join(&paths[1]), &clean)?;
        write_array(dir.join(&paths[2]), &draw.noisy)?;
        write_mask(&mask, dir.join(&paths[3]))?;
        let digests = SampleDigests {
            sigma: file_digest(dir.join(&paths[0]))?,
            clean: file_digest(dir.join(&paths[1]))?,
            noisy: file_digest(dir.join(&paths[2]))?,
            mask: file_digest(dir.join(&paths[3]))?,
        };
        let [sigma, clean_path, noisy, mask_path] = paths;
        Ok(SampleEntry {
            id,
            sigma,
            clean: clean_path,
            noisy,
            mask: mask_path,
            seed,
            noise_level: spec.noise_level,
            delta: draw.delta,
            snr_db: draw.snr_db.is_finite().then_some(draw.snr_db),
            inclusions: phantom.inclusions,
            digests,
        })
    })?;

    let manifest = DatasetManifest {
        version: DATASET_FORMAT_VERSION,
        mesh: "mesh.json".into(),
        mesh_digest: digest,
        protocol: "protocol.json".into(),
        protocol_digest: file_digest(dir.join("protocol.json"))?,
        skip: protocol.skip,
        m: protocol.m(),
        n: mesh.n_vertices(),
        contact_impedance: spec.contact_impedance,
        potential_order: spec.potential_order,
        noise_level: spec.noise_level,
        noise_scaling: spec.noise_scaling,
        master_seed: spec.master_seed,
        phantom: spec.phantom.clone(),
        bounds: spec.bounds,
        mask_tolerance: tol,
        mask_dilation: spec.mask_dilation,
        split: Split::contiguous(spec.n_samples),
        samples,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// One loaded sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub sigma: Vec<f64>,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub mask: OracleMask,
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub mesh: Mesh,
    pub protocol: Protocol,
}

impl Dataset {
    /// Opens a dataset and checks the mesh and protocol bindings.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let manifest_path = root.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| EitError::Malformed {
            path: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;
        if manifest.version != DATASET_FORMAT_VERSION {
            return Err(EitError::InvalidInput(format!("unsupported dataset version {}", manifest.version)));
        }
        let mesh = Mesh::read(root.join(&manifest.mesh))?;
        if mesh.digest() != manifest.mesh_digest {
            return Err(EitError::DigestMismatch {
                expected: manifest.mesh_digest.clone(),
                found: mesh.digest(),
            });
        }
        let protocol_path = root.join(&manifest.protocol);
        let found = file_digest(&protocol_path)?;
        if found != manifest.protocol_digest {
            return Err(EitError::DigestMismatch {
                expected: manifest.protocol_digest.clone(),
                found,
            });
        }
        let protocol = Protocol::read(&protocol_path)?;
        if protocol.m() != manifest.m || mesh.n_vertices() != manifest.n {
            return Err(EitError::InvalidInput("manifest sizes disagree with mesh or protocol".into()));
        }
        Ok(Dataset {
            root,
            manifest,
            mesh,
            protocol,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<Sample> {
        let entry = self
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| EitError::InvalidInput(format!("no sample {index}")))?;
        let sigma = read_array(self.root.join(&entry.sigma))?;
        let clean = read_array(self.root.join(&entry.clean))?;
        let noisy = read_array(self.root.join(&entry.noisy))?;
        let mask = read_mask(self.root.join(&entry.mask), &self.mesh)?;
        let n = self.manifest.n;
        let m = self.manifest.m;
        if sigma.len() != n || clean.len() != m || noisy.len() != m {
            return Err(EitError::Malformed {
                path: self.root.join(&entry.sigma).display().to_string(),
                reason: format!("sample {index} has inconsistent array lengths"),
            });
        }
        Ok(Sample {
            id: entry.id,
            sigma,
            clean,
            noisy,
            mask,
        })
    }

    /// Checks that every listed file exists, parses and matches its digest.
    pub fn verify(&self) -> Result<()> {
        for (i, entry) in self.manifest.samples.iter().enumerate() {
            let checks = [
                (&entry.sigma, &entry.digests.sigma),
                (&entry.clean, &entry.digests.clean),
                (&entry.noisy, &entry.digests.noisy),
                (&entry.mask, &entry.digests.mask),
            ];
            for (rel, expected) in checks {
                let found = file_digest(self.root.join(rel))?;
                if &found != expected {
                    return Err(EitError::DigestMismatch {
                        expected: expected.clone(),
                        found,
                    });
                }
            }
            self.load(i)?;
        }
        let split = &self.manifest.split;
        let mut ids: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).copied().collect();
        ids.sort_unstable();
        if ids != (0..self.len()).collect::<Vec<_>>() {
            return Err(EitError::InvalidInput("split does not partition the samples".into()));
        }
        Ok(())
    }
}
