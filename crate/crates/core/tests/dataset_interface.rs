//! On-disk formats shared with the support-estimator training code.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use eit_cs::dataset::{generate_dataset, Dataset, DatasetSpec};
use eit_cs::experiments::{Problem, RunOptions};
use eit_cs::io::sha256_hex;
use eit_cs::oracle::{read_mask, threshold_probabilities, write_mask, Provenance};
use eit_cs::protocol::NoiseScaling;
use eit_cs::{DiskMeshSpec, Execution, ForwardModel, PotentialOrder, Protocol, ProtocolKind, Variant};

fn build(dir: &Path, n_samples: usize, noise: f64, seed: u64) -> Dataset {
    let mesh = DiskMeshSpec::new(1.0, 0.2, 8, 0.5).build().unwrap();
    let protocol = Protocol::full(ProtocolKind::OppositeAdjacent, 8).unwrap();
    generate_dataset(dir, &mesh, &protocol, &DatasetSpec::new(n_samples, noise, seed), Execution::Parallel).unwrap();
    Dataset::open(dir).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "samples", "masks"] {
        for entry in std::fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Independent reader: magic, u32 version, u64 count, little-endian f64.
fn decode_eitb(bytes: &[u8]) -> Vec<f64> {
    assert_eq!(&bytes[..4], b"EITB");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 16 + 8 * count);
    bytes[16..].chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

#[test]
fn same_seed_gives_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    build(a.path(), 5, 1e-3, 7);
    build(b.path(), 5, 1e-3, 7);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb);

    let c = tempfile::tempdir().unwrap();
    build(c.path(), 5, 1e-3, 8);
    assert_ne!(ta["samples/0000.sigma.eitb"], tree(c.path())["samples/0000.sigma.eitb"]);
}

#[test]
fn samples_do_not_depend_on_the_dataset_size() {
    let small = tempfile::tempdir().unwrap();
    let large = tempfile::tempdir().unwrap();
    build(small.path(), 2, 1e-3, 3);
    build(large.path(), 6, 1e-3, 3);
    for f in ["samples/0001.sigma.eitb", "samples/0001.noisy.eitb", "masks/0001.json"] {
        assert_eq!(std::fs::read(small.path().join(f)).unwrap(), std::fs::read(large.path().join(f)).unwrap());
    }
}

#[test]
fn manifest_layout_and_digests() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 20, 2.5e-3, 1);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    for key in ["version", "mesh", "mesh_digest", "protocol", "m", "n", "noise_level", "noise_scaling", "master_seed", "split", "samples"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(manifest["noise_scaling"], json!("per-component"));
    assert_eq!(manifest["split"]["train"].as_array().unwrap().len(), 14);
    assert_eq!(manifest["split"]["validation"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["split"]["test"].as_array().unwrap().len(), 3);
    ds.verify().unwrap();

    let n = manifest["n"].as_u64().unwrap() as usize;
    let m = manifest["m"].as_u64().unwrap() as usize;
    for entry in manifest["samples"].as_array().unwrap() {
        for (field, len) in [("sigma", n), ("clean", m), ("noisy", m)] {
            let bytes = std::fs::read(dir.path().join(entry[field].as_str().unwrap())).unwrap();
            assert_eq!(sha256_hex(&bytes), entry["digests"][field].as_str().unwrap());
            assert_eq!(decode_eitb(&bytes).len(), len);
        }
        let clean = decode_eitb(&std::fs::read(dir.path().join(entry["clean"].as_str().unwrap())).unwrap());
        let noisy = decode_eitb(&std::fs::read(dir.path().join(entry["noisy"].as_str().unwrap())).unwrap());
        let eta: f64 = clean.iter().zip(&noisy).map(|(c, v)| (v - c).powi(2)).sum::<f64>().sqrt();
        assert!((eta - entry["delta"].as_f64().unwrap()).abs() <= 1e-12 * eta.max(1e-300));
    }
    assert_eq!(ds.manifest.noise_scaling, NoiseScaling::PerComponent);
}

#[test]
fn tampered_files_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 2, 0.0, 1);
    let path = dir.path().join("samples/0001.clean.eitb");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(ds.verify().is_err());
    std::fs::write(&path, b"EITB").unwrap();
    assert!(ds.load(1).is_err());
}

#[test]
fn mesh_json_exposes_plain_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 1, 0.0, 1);
    let mesh: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("mesh.json")).unwrap()).unwrap();
    let vertices = mesh["vertices"].as_array().unwrap();
    assert_eq!(vertices.len(), ds.mesh.n_vertices());
    assert_eq!(vertices[0].as_array().unwrap().len(), 2);
    assert_eq!(mesh["triangles"].as_array().unwrap().len(), ds.mesh.n_triangles());
    assert_eq!(mesh["electrodes"].as_array().unwrap().len(), 8);
    assert!(mesh["boundary_edges"].is_array());
}

#[test]
fn externally_written_thresholded_mask_drives_a_masked_solve() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 1, 0.0, 2);
    let sample = ds.load(0).unwrap();
    let n = ds.mesh.n_vertices();

    // Written the way the training code writes predictions: plain 0/1 integers.
    let bits: Vec<u8> = sample.mask.bits.iter().map(|&b| b as u8).collect();
    let text = json!({
        "version": 1,
        "mesh_digest": ds.mesh.digest(),
        "provenance": "thresholded",
        "sigma_th": 0.8,
        "bits": bits,
    })
    .to_string();
    let path = dir.path().join("predicted.json");
    std::fs::write(&path, text).unwrap();
    let mask = read_mask(&path, &ds.mesh).unwrap();
    assert_eq!(mask.provenance, Provenance::Thresholded);
    assert_eq!(mask.sigma_th, Some(0.8));
    assert_eq!(mask.bits, sample.mask.bits);

    let model = ForwardModel::new(&ds.mesh, PotentialOrder::Linear, ds.manifest.contact_impedance).unwrap();
    let problem = Problem::new(&model, &ds.protocol);
    let rep = problem.solve(&sample.clean, Some(&mask), Variant::TvMasked, 1e-8, &RunOptions::new(20, 1e-6)).unwrap();
    assert_eq!(rep.sigma.len(), n);

    let probs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let thresholded = threshold_probabilities(&probs, 0.5, &ds.mesh.digest()).unwrap();
    let out = dir.path().join("round_trip.json");
    write_mask(&thresholded, &out).unwrap();
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(raw["provenance"], json!("thresholded"));
    assert!(raw["bits"].as_array().unwrap().iter().all(|b| b == &json!(0) || b == &json!(1)));
    assert_eq!(read_mask(&out, &ds.mesh).unwrap(), thresholded);
}

#[test]
fn malformed_masks_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 1, 0.0, 2);
    let n = ds.mesh.n_vertices();
    let cases = [
        json!({"version": 1, "mesh_digest": "wrong", "provenance": "file", "sigma_th": null, "bits": vec![0; n]}),
        json!({"version": 1, "mesh_digest": ds.mesh.digest(), "provenance": "file", "sigma_th": null, "bits": vec![0; n - 1]}),
        json!({"version": 1, "mesh_digest": ds.mesh.digest(), "provenance": "file", "sigma_th": null, "bits": vec![2; n]}),
        json!({"version": 1, "mesh_digest": ds.mesh.digest(), "provenance": "thresholded", "sigma_th": 1.5, "bits": vec![0; n]}),
        json!({"version": 9, "mesh_digest": ds.mesh.digest(), "provenance": "file", "sigma_th": null, "bits": vec![0; n]}),
    ];
    for (k, value) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{k}.json"));
        std::fs::write(&path, value.to_string()).unwrap();
        assert!(read_mask(&path, &ds.mesh).is_err(), "case {k} accepted");
    }
}
