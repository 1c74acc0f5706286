use proptest::prelude::*;

use eit_cs::conductivity::Bounds;
use eit_cs::mesh::{build_disk_mesh, Mesh};
use eit_cs::oracle::{OracleMask, Provenance};
use eit_cs::prox::{prox_g, prox_tv, prox_tv_local, project_box, project_oracle, soft_threshold, tv_value, Penalty, RegularizerConfig};

fn local_objective(x: f64, data: f64, nu: &[f64], w: &[f64], tau: f64) -> f64 {
    0.5 * (x - data).powi(2) + tau * nu.iter().zip(w).map(|(v, wk)| wk * (x - v).abs()).sum::<f64>()
}

fn small_mesh() -> Mesh {
    build_disk_mesh(1.0, 0.3, 8, 0.5).unwrap()
}

fn neighbourhood() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|d| {
        (
            prop::collection::vec(-3.0..3.0f64, d).prop_map(|mut v| {
                v.sort_by(f64::total_cmp);
                v
            }),
            prop::collection::vec(0.05..2.0f64, d),
        )
    })
}

proptest! {
    #[test]
    fn local_median_is_the_minimiser((nu, w) in neighbourhood(), data in -4.0..4.0f64, tau in 0.0..2.0f64, eps in 1e-4..0.5f64) {
        let x = prox_tv_local(data, &nu, &w, tau);
        let f = local_objective(x, data, &nu, &w, tau);
        prop_assert!(f <= local_objective(x + eps, data, &nu, &w, tau) + 1e-12);
        prop_assert!(f <= local_objective(x - eps, data, &nu, &w, tau) + 1e-12);
    }

    #[test]
    fn local_median_stays_between_data_and_neighbours((nu, w) in neighbourhood(), data in -4.0..4.0f64, tau in 0.0..2.0f64) {
        let x = prox_tv_local(data, &nu, &w, tau);
        let lo = nu[0].min(data);
        let hi = nu[nu.len() - 1].max(data);
        prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
    }

    #[test]
    fn soft_threshold_is_the_l1_prox(v in prop::collection::vec(-3.0..3.0f64, 1..20), t in 0.0..1.0f64, r in -1.0..1.0f64) {
        let reference = vec![r; v.len()];
        let out = soft_threshold(&v, t, &reference);
        for ((o, x), s0) in out.iter().zip(&v).zip(&reference) {
            let d = x - s0;
            let expected = if d.abs() <= t { *s0 } else { x - t * d.signum() };
            prop_assert!((o - expected).abs() <= 1e-14);
            prop_assert!((o - s0).abs() <= d.abs());
        }
    }

    #[test]
    fn projections_are_idempotent(v in prop::collection::vec(-1.0..5.0f64, 1..30), seed in any::<u64>()) {
        let bounds = Bounds::new(0.2, 3.0).unwrap();
        let once = project_box(&v, &bounds);
        prop_assert_eq!(project_box(&once, &bounds), once.clone());
        prop_assert!(bounds.contains_all(&once));
        let bits: Vec<bool> = (0..v.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let mask = OracleMask::new(bits.clone(), "d", Provenance::File);
        let reference = vec![1.0; v.len()];
        let p = project_oracle(&v, &mask, &reference).unwrap();
        prop_assert_eq!(project_oracle(&p, &mask, &reference).unwrap(), p.clone());
        for i in 0..v.len() {
            prop_assert_eq!(p[i], if bits[i] { v[i] } else { 1.0 });
        }
    }

    #[test]
    fn prox_tv_never_increases_tv(seed in any::<u64>(), tau in 0.001..0.5f64) {
        let mesh = small_mesh();
        let adj = mesh.vertex_adjacency().unwrap();
        let x: Vec<f64> = (0..mesh.n_vertices()).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 250.0).collect();
        let (y, sweeps) = prox_tv(&x, tau, &adj, 5000, 1e-12);
        prop_assume!(sweeps < 5000);
        prop_assert!(tv_value(&y, &adj) <= tv_value(&x, &adj) + 1e-9);
    }

    #[test]
    fn prox_g_lands_in_the_constraint_set(seed in any::<u64>(), tau in 0.0..0.5f64, tv in any::<bool>()) {
        let mesh = small_mesh();
        let n = mesh.n_vertices();
        let x: Vec<f64> = (0..n).map(|i| ((seed.rotate_left(i as u32) % 997) as f64) / 100.0 - 2.0).collect();
        let bits: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let penalty = if tv { Penalty::Tv } else { Penalty::L1 };
        let reg = RegularizerConfig::new(&mesh, penalty, vec![1.0; n], Bounds::default())
            .unwrap()
            .with_mask(OracleMask::new(bits, mesh.digest(), Provenance::File))
            .unwrap();
        let out = prox_g(&x, tau, &reg).unwrap();
        prop_assert!(reg.is_feasible(&out));
    }
}

#[test]
fn prox_g_rejects_negative_parameters_and_wrong_lengths() {
    let mesh = small_mesh();
    let n = mesh.n_vertices();
    let reg = RegularizerConfig::new(&mesh, Penalty::L1, vec![1.0; n], Bounds::default()).unwrap();
    assert!(prox_g(&vec![1.0; n], -1.0, &reg).is_err());
    assert!(prox_g(&[1.0], 0.1, &reg).is_err());
}

#[test]
fn zero_parameter_tv_prox_is_the_identity() {
    let mesh = small_mesh();
    let adj = mesh.vertex_adjacency().unwrap();
    let x: Vec<f64> = (0..mesh.n_vertices()).map(|i| i as f64 * 0.1).collect();
    assert_eq!(prox_tv(&x, 0.0, &adj, 10, 1e-9), (x, 0));
}

#[test]
fn mask_bound_to_another_mesh_is_refused() {
    let mesh = small_mesh();
    let n = mesh.n_vertices();
    let reg = RegularizerConfig::new(&mesh, Penalty::Tv, vec![1.0; n], Bounds::default()).unwrap();
    assert!(reg.with_mask(OracleMask::all(n, true, "other")).is_err());
}
