//! Complete-electrode-model forward solver.
//!
//! Weak form: find `(u, U)` with `Σ_j U_j |E_j| = 0` such that
//!
//! ```text
//! ∫_Ω σ ∇u·∇v + Σ_l z⁻¹ ∫_{E_l} (u − U_l)(v − V_l) = Σ_l I_l V_l
//! ```
//!
//! for every test pair `(v, V)`. The conductivity is nodal P1, the potential
//! is P1 or P2 on the same triangles. The grounding constraint is enforced by
//! eliminating the last electrode voltage, which leaves a symmetric positive
//! definite system factored once per conductivity and reused for every
//! current pattern.
//!
//! Jacobian rows use the adjoint identity
//! `∂(U_h − U_l)/∂σ_k = −∫_Ω φ_k ∇u_drive · ∇u_meas`, where `u_meas` is the
//! potential driven by unit current through the measuring pair.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::linalg::{cuthill_mckee, EnvelopeCholesky, EnvelopeMatrix, EnvelopePattern};
use crate::mesh::Mesh;
use crate::par::{self, Execution};
use crate::protocol::Protocol;

/// Contact impedance used when none is configured (Ω·m).
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialOrder {
    #[default]
    #[serde(rename = "p1")]
    Linear,
    #[serde(rename = "p2")]
    Quadratic,
}

impl PotentialOrder {
    pub fn from_degree(d: u32) -> Result<Self> {
        match d {
            1 => Ok(PotentialOrder::Linear),
            2 => Ok(PotentialOrder::Quadratic),
            _ => Err(EitError::InvalidInput(format!("potential order must be 1 or 2, got {d}"))),
        }
    }

    fn local_dofs(self) -> usize {
        match self {
            PotentialOrder::Linear => 3,
            PotentialOrder::Quadratic => 6,
        }
    }
}

/// Barycentric quadrature on a triangle; weights sum to one.
struct QuadRule {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl QuadRule {
    fn centroid() -> Self {
        QuadRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
        }
    }

    /// Six-point rule, exact for degree 4.
    fn degree4() -> Self {
        let (a1, w1) = (0.445_948_490_915_965, 0.223_381_589_678_011);
        let (a2, w2) = (0.091_576_213_509_771, 0.109_951_743_655_322);
        let (b1, b2) = (1.0 - 2.0 * a1, 1.0 - 2.0 * a2);
        QuadRule {
            points: vec![
                [a1, a1, b1],
                [a1, b1, a1],
                [b1, a1, a1],
                [a2, a2, b2],
                [a2, b2, a2],
                [b2, a2, a2],
            ],
            weights: vec![w1, w1, w1, w2, w2, w2],
        }
    }
}

/// Electrode voltages and interior potential for one current pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    /// Potential degrees of freedom: vertex values first, then (P2) edge midpoints.
    pub potential: Vec<f64>,
    /// `U`, grounded so that `Σ_j U_j |E_j| = 0`.
    pub electrode_voltages: Vec<f64>,
}

/// `∂Φ/∂σ` at a conductivity, bound to the protocol that produced it.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub entries: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub protocol: Protocol,
}

impl JacobianMatrix {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// `Jᵀ y`
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let y = nalgebra::DVector::from_column_slice(y);
        (self.entries.transpose() * y).as_slice().to_vec()
    }

    /// `J d`
    pub fn mul(&self, d: &[f64]) -> Vec<f64> {
        let d = nalgebra::DVector::from_column_slice(d);
        (&self.entries * d).as_slice().to_vec()
    }
}

/// Precomputed geometry, quadrature tables and sparsity for one mesh.
pub struct ForwardModel {
    mesh: Mesh,
    order: PotentialOrder,
    z: f64,
    n_u: usize,
    nloc: usize,
    /// `nloc` dofs per triangle.
    tri_dofs: Vec<usize>,
    quad: QuadRule,
    /// Per triangle, quadrature point, local dof: basis gradient.
    basis_grads: Vec<[f64; 2]>,
    /// Per triangle, quadrature point, vertex k: `w · area · λ_k`.
    vertex_coef: Vec<[f64; 3]>,
    /// Per triangle, vertex k: packed lower triangle of `∫ λ_k ∇ψ_a·∇ψ_b`.
    local_stiffness: Vec<f64>,
    electrode_len: Vec<f64>,
    /// `∫_{E_l} ψ_a` as sparse `(dof, value)` lists.
    electrode_load: Vec<Vec<(usize, f64)>>,
    /// Original index → position in the factored system.
    perm: Vec<usize>,
    pattern: EnvelopePattern,
    base_values: Vec<f64>,
    /// Storage position for every packed local entry of every triangle.
    scatter: Vec<usize>,
}

fn packed_len(nloc: usize) -> usize {
    nloc * (nloc + 1) / 2
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl ForwardModel {
    pub fn new(mesh: &Mesh, order: PotentialOrder, z: f64) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(EitError::InvalidInput(format!("contact impedance must be positive, got {z}")));
        }
        let p = mesh.n_electrodes();
        if p < 2 {
            return Err(EitError::InvalidInput("forward model needs at least two electrodes".into()));
        }
        let nv = mesh.n_vertices();
        let nt = mesh.n_triangles();
        let nloc = order.local_dofs();
        let edges = mesh.edges();
        let edge_dof = |a: usize, b: usize| -> usize {
            let key = [a.min(b), a.max(b)];
            nv + edges.binary_search(&key).expect("edge of a triangle")
        };
        let n_u = match order {
            PotentialOrder::Linear => nv,
            PotentialOrder::Quadratic => nv + edges.len(),
        };

        let mut tri_dofs = Vec::with_capacity(nt * nloc);
        for &[a, b, c] in &mesh.triangles {
            tri_dofs.extend_from_slice(&[a, b, c]);
            if order == PotentialOrder::Quadratic {
                tri_dofs.extend_from_slice(&[edge_dof(a, b), edge_dof(b, c), edge_dof(c, a)]);
            }
        }

        let quad = match order {
            PotentialOrder::Linear => QuadRule::centroid(),
            PotentialOrder::Quadratic => QuadRule::degree4(),
        };
        let nq = quad.points.len();
        let mut basis_grads = Vec::with_capacity(nt * nq * nloc);
        let mut vertex_coef = Vec::with_capacity(nt * nq);
        let np = packed_len(nloc);
        let mut local_stiffness = vec![0.0; nt * 3 * np];
        for t in 0..nt {
            let [i0, i1, i2] = mesh.triangles[t];
            let (x0, x1, x2) = (mesh.vertices[i0], mesh.vertices[i1], mesh.vertices[i2]);
            let area = mesh.triangle_area(t);
            let s = 1.0 / (2.0 * area);
            let gl = [
                [(x1[1] - x2[1]) * s, (x2[0] - x1[0]) * s],
                [(x2[1] - x0[1]) * s, (x0[0] - x2[0]) * s],
                [(x0[1] - x1[1]) * s, (x1[0] - x0[0]) * s],
            ];
            for (q, l) in quad.points.iter().enumerate() {
                let g: Vec<[f64; 2]> = match order {
                    PotentialOrder::Linear => gl.to_vec(),
                    PotentialOrder::Quadratic => {
                        let vert = |i: usize| {
                            let f = 4.0 * l[i] - 1.0;
                            [f * gl[i][0], f * gl[i][1]]
                        };
                        let edge = |i: usize, j: usize| {
                            [
                                4.0 * (l[i] * gl[j][0] + l[j] * gl[i][0]),
                                4.0 * (l[i] * gl[j][1] + l[j] * gl[i][1]),
                            ]
                        };
                        vec![vert(0), vert(1), vert(2), edge(0, 1), edge(1, 2), edge(2, 0)]
                    }
                };
                let wa = quad.weights[q] * area;
                let coef = [wa * l[0], wa * l[1], wa * l[2]];
                for k in 0..3 {
                    let base = (t * 3 + k) * np;
                    let mut idx = 0;
                    for a in 0..nloc {
                        for b in 0..=a {
                            local_stiffness[base + idx] += coef[k] * dot2(g[a], g[b]);
                            idx += 1;
                        }
                    }
                }
                basis_grads.extend_from_slice(&g);
                vertex_coef.push(coef);
            }
        }

        // Electrode boundary integrals.
        let mut electrode_len = Vec::with_capacity(p);
        let mut electrode_load = Vec::with_capacity(p);
        let mut electrode_mass: Vec<Vec<(usize, usize, f64)>> = Vec::with_capacity(p);
        for j in 0..p {
            let mut load: HashMap<usize, f64> = HashMap::new();
            let mut mass = Vec::new();
            let mut len_j = 0.0;
            for &e in &mesh.electrodes[j] {
                let [a, b] = mesh.boundary_edges[e];
                let len = mesh.boundary_edge_length(e);
                len_j += len;
                match order {
                    PotentialOrder::Linear => {
                        let dofs = [a, b];
                        let m = [[2.0, 1.0], [1.0, 2.0]];
                        for r in 0..2 {
                            *load.entry(dofs[r]).or_default() += len / 2.0;
                            for c in 0..2 {
                                mass.push((dofs[r], dofs[c], len / 6.0 * m[r][c]));
                            }
                        }
                    }
                    PotentialOrder::Quadratic => {
                        let dofs = [a, b, edge_dof(a, b)];
                        let m = [[4.0, -1.0, 2.0], [-1.0, 4.0, 2.0], [2.0, 2.0, 16.0]];
                        let l = [len / 6.0, len / 6.0, 2.0 * len / 3.0];
                        for r in 0..3 {
                            *load.entry(dofs[r]).or_default() += l[r];
                            for c in 0..3 {
                                mass.push((dofs[r], dofs[c], len / 30.0 * m[r][c]));
                            }
                        }
                    }
                }
            }
            let mut load: Vec<(usize, f64)> = load.into_iter().collect();
            load.sort_unstable_by_key(|&(d, _)| d);
            electrode_len.push(len_j);
            electrode_load.push(load);
            electrode_mass.push(mass);
        }

        // Graph of the potential unknowns for the ordering.
        let n_sys = n_u + p - 1;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_u];
        for t in 0..nt {
            let d = &tri_dofs[t * nloc..(t + 1) * nloc];
            for &a in d {
                for &b in d {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for mass in &electrode_mass {
            for &(a, b, _) in mass {
                if a != b {
                    adj[a].push(b);
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let center = (0..nv)
            .min_by(|&a, &b| {
                let ra = mesh.vertices[a][0].hypot(mesh.vertices[a][1]);
                let rb = mesh.vertices[b][0].hypot(mesh.vertices[b][1]);
                ra.total_cmp(&rb)
            })
            .unwrap();
        let order_u = cuthill_mckee(&adj, center);
        let mut perm = vec![0; n_sys];
        for (new, &old) in order_u.iter().enumerate() {
            perm[old] = new;
        }
        for j in 0..p - 1 {
            perm[n_u + j] = n_u + j;
        }

        // Envelope: smallest coupled column per row.
        let mut first: Vec<usize> = (0..n_sys).collect();
        let couple = |i: usize, j: usize, first: &mut Vec<usize>| {
            let (pi, pj) = (perm[i], perm[j]);
            let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            first[hi] = first[hi].min(lo);
        };
        for (a, list) in adj.iter().enumerate() {
            for &b in list {
                couple(a, b, &mut first);
            }
        }
        let last = p - 1;
        for (j, load) in electrode_load.iter().enumerate() {
            for &(a, _) in load {
                if j < last {
                    couple(a, n_u + j, &mut first);
                } else {
                    for k in 0..last {
                        couple(a, n_u + k, &mut first);
                    }
                }
            }
        }
        for j in 0..last {
            for k in 0..last {
                couple(n_u + j, n_u + k, &mut first);
            }
        }
        let pattern = EnvelopePattern::new(first);

        let mut model = ForwardModel {
            mesh: mesh.clone(),
            order,
            z,
            n_u,
            nloc,
            tri_dofs,
            quad,
            basis_grads,
            vertex_coef,
            local_stiffness,
            electrode_len,
            electrode_load,
            perm,
            pattern,
            base_values: Vec::new(),
            scatter: Vec::new(),
        };

        let mut scatter = Vec::with_capacity(nt * np);
        for t in 0..nt {
            let d = &model.tri_dofs[t * nloc..(t + 1) * nloc];
            for a in 0..nloc {
                for b in 0..=a {
                    scatter.push(model.pattern.position(model.perm[d[a]], model.perm[d[b]]));
                }
            }
        }
        model.scatter = scatter;

        // σ-independent electrode part.
        let mut base = EnvelopeMatrix::zeros(&model.pattern);
        let inv_z = 1.0 / z;
        let len_last = model.electrode_len[last];
        let ratio: Vec<f64> = model.electrode_len.iter().map(|l| l / len_last).collect();
        for mass in &electrode_mass {
            for &(a, b, v) in mass {
                // each symmetric pair is listed twice; store the lower half once
                if model.perm[a] >= model.perm[b] {
                    base.add(model.perm[a], model.perm[b], inv_z * v);
                }
            }
        }
        for (j, load) in model.electrode_load.iter().enumerate() {
            for &(a, v) in load {
                if j < last {
                    base.add(model.perm[a], model.perm[n_u + j], -inv_z * v);
                } else {
                    for k in 0..last {
                        base.add(model.perm[a], model.perm[n_u + k], inv_z * ratio[k] * v);
                    }
                }
            }
        }
        for j in 0..last {
            for k in 0..=j {
                let mut v = model.electrode_len[j] * model.electrode_len[k] / (z * len_last);
                if j == k {
                    v += model.electrode_len[j] / z;
                }
                base.add(model.perm[n_u + j], model.perm[n_u + k], v);
            }
        }
        model.base_values = base.values_mut().to_vec();
        Ok(model)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn order(&self) -> PotentialOrder {
        self.order
    }

    pub fn contact_impedance(&self) -> f64 {
        self.z
    }

    /// Number of conductivity unknowns (mesh vertices).
    pub fn n(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrode_len.len()
    }

    pub fn electrode_lengths(&self) -> &[f64] {
        &self.electrode_len
    }

    fn system_dim(&self) -> usize {
        self.n_u + self.n_electrodes() - 1
    }

    fn assemble(&self, sigma: &[f64]) -> Result<EnvelopeMatrix<'_>> {
        let nv = self.n();
        if sigma.len() != nv {
            return Err(EitError::InvalidInput(format!(
                "conductivity has {} values, mesh has {nv} vertices",
                sigma.len()
            )));
        }
        if let Some((i, v)) = sigma.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EitError::InvalidInput(format!("non-finite conductivity {v} at vertex {i}")));
        }
        if let Some((i, v)) = sigma.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(EitError::Numerical(format!(
                "conductivity {v} at vertex {i} is not positive; the system is singular"
            )));
        }
        let np = packed_len(self.nloc);
        let mut values = self.base_values.clone();
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            let s = [sigma[tri[0]], sigma[tri[1]], sigma[tri[2]]];
            let local = &self.local_stiffness[t * 3 * np..(t + 1) * 3 * np];
            let scatter = &self.scatter[t * np..(t + 1) * np];
            for (idx, &pos) in scatter.iter().enumerate() {
                values[pos] += s[0] * local[idx] + s[1] * local[np + idx] + s[2] * local[2 * np + idx];
            }
        }
        Ok(EnvelopeMatrix::from_values(&self.pattern, values))
    }

    /// Assembles and factors the system matrix for one conductivity.
    pub fn factorize(&self, sigma: &[f64]) -> Result<FactorizedSystem<'_>> {
        let matrix = self.assemble(sigma)?;
        let chol = matrix.clone().factor()?;
        Ok(FactorizedSystem {
            model: self,
            matrix,
            chol,
        })
    }

    pub fn assemble_and_solve(&self, sigma: &[f64], currents: &[f64]) -> Result<ForwardSolution> {
        self.factorize(sigma)?.solve(currents)
    }

    /// Per-triangle, per-quadrature-point gradient of a potential.
    fn potential_gradients(&self, potential: &[f64]) -> Vec<[f64; 2]> {
        let nq = self.quad.points.len();
        let nloc = self.nloc;
        let mut out = Vec::with_capacity(self.mesh.n_triangles() * nq);
        for t in 0..self.mesh.n_triangles() {
            let dofs = &self.tri_dofs[t * nloc..(t + 1) * nloc];
            for q in 0..nq {
                let g = &self.basis_grads[(t * nq + q) * nloc..(t * nq + q + 1) * nloc];
                let mut acc = [0.0, 0.0];
                for (a, &d) in dofs.iter().enumerate() {
                    acc[0] += potential[d] * g[a][0];
                    acc[1] += potential[d] * g[a][1];
                }
                out.push(acc);
            }
        }
        out
    }

    /// `−∫ φ_k ∇u·∇w` for every vertex `k`, given precomputed gradients.
    fn sensitivity(&self, grad_u: &[[f64; 2]], grad_w: &[[f64; 2]], scale: f64, out: &mut [f64]) {
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            let nq = self.quad.points.len();
            for q in 0..nq {
                let idx = t * nq + q;
                let d = -scale * dot2(grad_u[idx], grad_w[idx]);
                let c = self.vertex_coef[idx];
                out[tri[0]] += c[0] * d;
                out[tri[1]] += c[1] * d;
                out[tri[2]] += c[2] * d;
            }
        }
    }

    /// Φ(σ): one forward solve per distinct injection pattern.
    pub fn apply_phi(&self, sigma: &[f64], protocol: &Protocol, exec: Execution) -> Result<Vec<f64>> {
        Ok(self.evaluate(sigma, protocol, exec, false)?.0)
    }

    /// Jacobian of Φ at σ.
    pub fn jacobian(&self, sigma: &[f64], protocol: &Protocol, exec: Execution) -> Result<JacobianMatrix> {
        Ok(self.evaluate(sigma, protocol, exec, true)?.1.unwrap())
    }

    fn check_protocol(&self, protocol: &Protocol) -> Result<()> {
        protocol.validate()?;
        if protocol.p != self.n_electrodes() {
            return Err(EitError::InvalidInput(format!(
                "protocol is for {} electrodes, mesh has {}",
                protocol.p,
                self.n_electrodes()
            )));
        }
        Ok(())
    }

    /// Measurements and, optionally, the Jacobian from a single factorisation.
    pub fn evaluate(
        &self,
        sigma: &[f64],
        protocol: &Protocol,
        exec: Execution,
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<JacobianMatrix>)> {
        self.check_protocol(protocol)?;
        let system = self.factorize(sigma)?;
        let pairs = protocol.pairs();
        let mut patterns = PatternSet::default();
        for &(c, _) in &pairs {
            patterns.insert(protocol.injections[c]);
        }
        if with_jacobian {
            for &(_, v) in &pairs {
                patterns.insert(protocol.measurements[v]);
            }
        }
        let solutions = par::try_map_indexed(exec, patterns.keys.len(), |i| {
            let [a, b] = patterns.keys[i];
            system.solve(&protocol.pattern_currents([a, b]))
        })?;
        let phi: Vec<f64> = pairs
            .iter()
            .map(|&(c, v)| {
                let (k, s) = patterns.lookup(protocol.injections[c]);
                let [h, l] = protocol.measurements[v];
                let u = &solutions[k].electrode_voltages;
                s * (u[h] - u[l])
            })
            .collect();
        if !with_jacobian {
            return Ok((phi, None));
        }
        let grads = par::map_indexed(exec, solutions.len(), |i| {
            self.potential_gradients(&solutions[i].potential)
        });
        let n = self.n();
        let rows = par::map_indexed(exec, pairs.len(), |r| {
            let (c, v) = pairs[r];
            let (kd, sd) = patterns.lookup(protocol.injections[c]);
            let (km, sm) = patterns.lookup(protocol.measurements[v]);
            let mut row = vec![0.0; n];
            self.sensitivity(&grads[kd], &grads[km], sd * sm, &mut row);
            row
        });
        let mut entries = DMatrix::zeros(pairs.len(), n);
        for (r, row) in rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                entries[(r, k)] = v;
            }
        }
        let jac = JacobianMatrix {
            entries,
            sigma: sigma.to_vec(),
            protocol: protocol.clone(),
        };
        Ok((phi, Some(jac)))
    }

    /// `J(σ)ᵀ y` without forming `J`: for each injection the measurement
    /// potentials are combined with the weights `y` into one adjoint field.
    pub fn jacobian_transpose_apply(
        &self,
        sigma: &[f64],
        protocol: &Protocol,
        y: &[f64],
        exec: Execution,
    ) -> Result<Vec<f64>> {
        self.check_protocol(protocol)?;
        let pairs = protocol.pairs();
        if y.len() != pairs.len() {
            return Err(EitError::InvalidInput(format!(
                "adjoint weights have length {}, protocol records {}",
                y.len(),
                pairs.len()
            )));
        }
        let system = self.factorize(sigma)?;
        let n = self.n();
        let parts = par::try_map_indexed(exec, protocol.n_c(), |c| -> Result<Vec<f64>> {
            let drive = system.solve(&protocol.pattern_currents(protocol.injections[c]))?;
            let mut adjoint_currents = vec![0.0; protocol.p];
            for (r, &(cc, v)) in pairs.iter().enumerate() {
                if cc == c {
                    let [h, l] = protocol.measurements[v];
                    adjoint_currents[h] += y[r];
                    adjoint_currents[l] -= y[r];
                }
            }
            let adjoint = system.solve(&adjoint_currents)?;
            let mut out = vec![0.0; n];
            self.sensitivity(
                &self.potential_gradients(&drive.potential),
                &self.potential_gradients(&adjoint.potential),
                1.0,
                &mut out,
            );
            Ok(out)
        })?;
        let mut total = vec![0.0; n];
        for part in parts {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// Transfer matrix `R_ij = (e_j − e_p)ᵀ U(e_i − e_p)` over the reduced
    /// electrode space; symmetric by reciprocity.
    pub fn transfer_matrix(&self, sigma: &[f64], exec: Execution) -> Result<DMatrix<f64>> {
        let p = self.n_electrodes();
        let system = self.factorize(sigma)?;
        let cols = par::try_map_indexed(exec, p - 1, |i| {
            let mut cur = vec![0.0; p];
            cur[i] = 1.0;
            cur[p - 1] = -1.0;
            system.solve(&cur)
        })?;
        Ok(DMatrix::from_fn(p - 1, p - 1, |j, i| {
            let u = &cols[i].electrode_voltages;
            u[j] - u[p - 1]
        }))
    }
}

/// Distinct electrode pairs, keyed as `(min, max)` with a sign for orientation.
#[derive(Default)]
struct PatternSet {
    keys: Vec<[usize; 2]>,
    index: HashMap<[usize; 2], usize>,
}

impl PatternSet {
    fn canonical(pair: [usize; 2]) -> ([usize; 2], f64) {
        if pair[0] < pair[1] {
            (pair, 1.0)
        } else {
            ([pair[1], pair[0]], -1.0)
        }
    }

    fn insert(&mut self, pair: [usize; 2]) {
        let (key, _) = Self::canonical(pair);
        if !self.index.contains_key(&key) {
            self.index.insert(key, self.keys.len());
            self.keys.push(key);
        }
    }

    fn lookup(&self, pair: [usize; 2]) -> (usize, f64) {
        let (key, sign) = Self::canonical(pair);
        (self.index[&key], sign)
    }
}

/// A factored system for one conductivity, reusable across current patterns.
pub struct FactorizedSystem<'m> {
    model: &'m ForwardModel,
    matrix: EnvelopeMatrix<'m>,
    chol: EnvelopeCholesky<'m>,
}

impl FactorizedSystem<'_> {
    fn rhs(&self, currents: &[f64]) -> Result<Vec<f64>> {
        let m = self.model;
        let p = m.n_electrodes();
        if currents.len() != p {
            return Err(EitError::InvalidInput(format!(
                "expected {p} electrode currents, got {}",
                currents.len()
            )));
        }
        let sum: f64 = currents.iter().sum();
        let scale = currents.iter().fold(0.0f64, |a, &c| a.max(c.abs())).max(1.0);
        if sum.abs() > 1e-12 * scale {
            return Err(EitError::InvalidInput(format!(
                "injected currents must sum to zero (sum = {sum:e})"
            )));
        }
        let last = p - 1;
        let mut b = vec![0.0; m.system_dim()];
        for j in 0..last {
            let r = m.electrode_len[j] / m.electrode_len[last];
            b[m.perm[m.n_u + j]] = currents[j] - r * currents[last];
        }
        Ok(b)
    }

    pub fn solve(&self, currents: &[f64]) -> Result<ForwardSolution> {
        let m = self.model;
        let b = self.rhs(currents)?;
        let x = self.chol.solve(&b);
        let potential: Vec<f64> = (0..m.n_u).map(|i| x[m.perm[i]]).collect();
        let p = m.n_electrodes();
        let last = p - 1;
        let mut u: Vec<f64> = (0..last).map(|j| x[m.perm[m.n_u + j]]).collect();
        let u_last = -(0..last)
            .map(|j| u[j] * m.electrode_len[j] / m.electrode_len[last])
            .sum::<f64>();
        u.push(u_last);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(EitError::Numerical("forward solve produced non-finite voltages".into()));
        }
        Ok(ForwardSolution {
            potential,
            electrode_voltages: u,
        })
    }

    /// Relative residual `‖A x − b‖ / ‖b‖` of the reduced system.
    pub fn relative_residual(&self, solution: &ForwardSolution, currents: &[f64]) -> Result<f64> {
        let m = self.model;
        let b = self.rhs(currents)?;
        let mut x = vec![0.0; m.system_dim()];
        for i in 0..m.n_u {
            x[m.perm[i]] = solution.potential[i];
        }
        for j in 0..m.n_electrodes() - 1 {
            x[m.perm[m.n_u + j]] = solution.electrode_voltages[j];
        }
        let ax = self.matrix.mul_vec(&x);
        let r: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(r / nb.max(f64::MIN_POSITIVE))
    }

    /// Currents actually leaving through each electrode,
    /// `I_l = z⁻¹ ∫_{E_l} (U_l − u)`.
    pub fn electrode_currents(&self, solution: &ForwardSolution) -> Vec<f64> {
        let m = self.model;
        (0..m.n_electrodes())
            .map(|l| {
                let int_u: f64 = m.electrode_load[l]
                    .iter()
                    .map(|&(d, w)| w * solution.potential[d])
                    .sum();
                (solution.electrode_voltages[l] * m.electrode_len[l] - int_u) / m.z
            })
            .collect()
    }
}

/// Forward model, protocol and execution policy bundled for the solvers.
#[derive(Clone, Copy)]
pub struct ForwardContext<'a> {
    pub model: &'a ForwardModel,
    pub protocol: &'a Protocol,
    pub exec: Execution,
}

impl<'a> ForwardContext<'a> {
    pub fn new(model: &'a ForwardModel, protocol: &'a Protocol, exec: Execution) -> Self {
        ForwardContext { model, protocol, exec }
    }

    pub fn phi(&self, sigma: &[f64]) -> Result<Vec<f64>> {
        self.model.apply_phi(sigma, self.protocol, self.exec)
    }

    pub fn phi_and_jacobian(&self, sigma: &[f64]) -> Result<(Vec<f64>, JacobianMatrix)> {
        let (phi, jac) = self.model.evaluate(sigma, self.protocol, self.exec, true)?;
        Ok((phi, jac.unwrap()))
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.protocol.m()
    }
}

/// Extreme squared singular values of sampled Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub alpha: f64,
    pub beta: f64,
    /// The lower bound vanished within tolerance: the restricted isometry fails.
    pub degenerate: bool,
}

/// Extreme eigenvalues of `AᵀA` (or of `AAᵀ` when that is smaller).
pub fn squared_singular_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let (m, n) = a.shape();
    let gram = if m >= n { a.transpose() * a } else { a * a.transpose() };
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = if m >= n {
        eig.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0)
    } else {
        0.0
    };
    (min, max)
}

/// `α̂ = min λ_min(JᵀJ)`, `β̂ = max λ_max(JᵀJ)` over the samples, optionally
/// with `J` restricted to a subset of columns.
pub fn estimate_rip_bounds(
    ctx: &ForwardContext<'_>,
    samples: &[Vec<f64>],
    columns: Option<&[usize]>,
) -> Result<RipEstimate> {
    if samples.is_empty() {
        return Err(EitError::InvalidInput("RIP estimation needs at least one sample".into()));
    }
    let extremes = par::try_map_indexed(ctx.exec, samples.len(), |i| -> Result<(f64, f64)> {
        let jac = ctx.model.jacobian(&samples[i], ctx.protocol, Execution::Sequential)?;
        let mat = match columns {
            Some(cols) => jac.entries.select_columns(cols.iter()),
            None => jac.entries,
        };
        Ok(squared_singular_extremes(&mat))
    })?;
    let alpha = extremes.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let beta = extremes.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(RipEstimate {
        alpha,
        beta,
        degenerate: alpha <= 1e-12 * beta,
    })
}
