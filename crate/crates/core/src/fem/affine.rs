//! Affine parametric assembly.
//!
//! Every macro-triangle of the deformable box is the image of its reference
//! shape under an affine map `F(x) = A x + b`. On an element of that
//! macro-triangle the stiffness is
//! `sum_kl C_kl ∫ nu dN_i/dx_k dN_j/dx_l` on the reference element, with
//! `C = |det A| A^-1 A^-T`, so the matrix splits into one fixed part and
//! three reference matrices per macro-triangle. The magnet load splits the
//! same way with `|det A| A^-T`.

use std::collections::BTreeMap;

use super::assembly::{p1_gradients, phase_vectors, reluctivity, Sources};
use super::geometry::{Materials, PmParams, PoleGeometry, Winding};
use super::mesh::{Mesh, Region, MACRO_REGIONS, MACRO_TRIS};
use super::solve::{dot, flux_weights, FieldSolution, SolverPlan};
use super::sparse::CsrMatrix;
use super::FemError;

type M2 = [[f64; 2]; 2];

fn inv2(a: M2) -> (M2, f64) {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    (
        [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ],
        det,
    )
}

fn mul2(a: M2, b: M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Edge matrix `[v1 - v0, v2 - v0]` (columns) of a triangle.
fn edges(v: [[f64; 2]; 3]) -> M2 {
    [
        [v[1][0] - v[0][0], v[2][0] - v[0][0]],
        [v[1][1] - v[0][1], v[2][1] - v[0][1]],
    ]
}

/// Sparse contribution of one macro-triangle to the stiffness values.
#[derive(Debug, Clone)]
struct StiffnessTerm {
    idx: Vec<usize>,
    /// Reference matrices for `C_00`, `C_01`, `C_11`.
    parts: [Vec<f64>; 3],
}

#[derive(Debug, Clone)]
struct MagnetTerm {
    macro_id: usize,
    nodes: Vec<usize>,
    /// `∫ dN/dx` and `∫ dN/dy` on the reference shape.
    bx: Vec<f64>,
    by: Vec<f64>,
}

/// Which currents and fields drive a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation {
    /// Magnets only, no current.
    Magnets,
    /// d-axis current of the given RMS magnitude, magnets off.
    DAxis(f64),
    /// q-axis current of the given RMS magnitude, magnets off.
    QAxis(f64),
    Custom(Sources),
}

/// Precomputed parametric system for one mesh.
#[derive(Debug, Clone)]
pub struct AffineSystem {
    mesh: Mesh,
    geometry: PoleGeometry,
    materials: Materials,
    winding: Winding,
    ref_vertices: [[f64; 2]; 8],
    k_fixed: Vec<f64>,
    k_terms: Vec<StiffnessTerm>,
    magnet_terms: Vec<MagnetTerm>,
    phase_load: [Vec<f64>; 3],
    flux: [Vec<f64>; 3],
    plan: SolverPlan,
}

/// Precomputes the affine decomposition on a mesh with a deformable box.
pub fn precompute_affine(mesh: Mesh, materials: &Materials) -> Result<AffineSystem, FemError> {
    let db = mesh
        .deformable
        .clone()
        .ok_or_else(|| FemError::Mesh("mesh has no deformable box".into()))?;
    materials.validate()?;
    let geometry = db.geometry;
    let winding = geometry.winding();
    let l_z = geometry.l_z;
    let ref_vertices = db.vertices(&db.reference);

    let mut k_fixed = vec![0.0; mesh.pattern.nnz()];
    let mut acc: Vec<BTreeMap<usize, [f64; 3]>> = vec![BTreeMap::new(); MACRO_TRIS.len()];
    let mut mag: BTreeMap<usize, (BTreeMap<usize, f64>, BTreeMap<usize, f64>)> = BTreeMap::new();
    for ((t, r), blk) in mesh.tris.iter().zip(&mesh.regions).zip(&mesh.blocks) {
        let (area, b, c) = p1_gradients(t.map(|i| mesh.nodes[i]));
        let s = reluctivity(*r, materials) / (l_z * 4.0 * area);
        for a in 0..3 {
            for bb in 0..3 {
                let idx = mesh
                    .pattern
                    .index(t[a], t[bb])
                    .expect("pattern covers element");
                match blk {
                    None => k_fixed[idx] += s * (b[a] * b[bb] + c[a] * c[bb]),
                    Some(m) => {
                        let e = acc[*m as usize].entry(idx).or_insert([0.0; 3]);
                        e[0] += s * b[a] * b[bb];
                        e[1] += s * (b[a] * c[bb] + c[a] * b[bb]);
                        e[2] += s * c[a] * c[bb];
                    }
                }
            }
        }
        if *r == Region::Magnet {
            let m = blk.ok_or_else(|| {
                FemError::Mesh("magnet element outside the deformable box".into())
            })?;
            let (ex, ey) = mag.entry(m as usize).or_default();
            for k in 0..3 {
                *ex.entry(t[k]).or_insert(0.0) += 0.5 * b[k];
                *ey.entry(t[k]).or_insert(0.0) += 0.5 * c[k];
            }
        }
    }
    let k_terms = acc
        .into_iter()
        .map(|m| {
            let idx: Vec<usize> = m.keys().copied().collect();
            let parts = [0, 1, 2].map(|q| m.values().map(|v| v[q]).collect());
            StiffnessTerm { idx, parts }
        })
        .collect();
    let magnet_terms = mag
        .into_iter()
        .map(|(macro_id, (ex, ey))| MagnetTerm {
            macro_id,
            nodes: ex.keys().copied().collect(),
            bx: ex.values().copied().collect(),
            by: ey.values().copied().collect(),
        })
        .collect();
    let phase_load = phase_vectors(&mesh, &winding)?;
    let flux = flux_weights(&mesh, &winding)?;
    let plan = SolverPlan::new(&mesh);
    Ok(AffineSystem {
        mesh,
        geometry,
        materials: *materials,
        winding,
        ref_vertices,
        k_fixed,
        k_terms,
        magnet_terms,
        phase_load,
        flux,
        plan,
    })
}

impl AffineSystem {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn geometry(&self) -> &PoleGeometry {
        &self.geometry
    }

    pub fn materials(&self) -> &Materials {
        &self.materials
    }

    pub fn winding(&self) -> &Winding {
        &self.winding
    }

    pub fn reference(&self) -> PmParams {
        self.mesh
            .deformable
            .as_ref()
            .expect("affine mesh has a box")
            .reference
    }

    pub fn plan(&self) -> &SolverPlan {
        &self.plan
    }

    /// Number of stiffness terms `Q` (fixed part included).
    pub fn n_stiffness_terms(&self) -> usize {
        1 + 3 * self.k_terms.len()
    }

    /// The `q`-th reference stiffness part as `(csr indices, values)`;
    /// `q = 0` is the fixed region.
    pub fn stiffness_term(&self, q: usize) -> (Vec<usize>, &[f64]) {
        if q == 0 {
            ((0..self.k_fixed.len()).collect(), &self.k_fixed)
        } else {
            let t = &self.k_terms[(q - 1) / 3];
            (t.idx.clone(), &t.parts[(q - 1) % 3])
        }
    }

    fn maps(&self, p: &PmParams) -> Vec<(M2, f64)> {
        let v = self.geometry.box_vertices(p);
        MACRO_TRIS
            .iter()
            .map(|tri| {
                let idx = tri.map(|k| k as usize);
                let cur = edges(idx.map(|k| v[k]));
                let (rinv, _) = inv2(edges(idx.map(|k| self.ref_vertices[k])));
                let a = mul2(cur, rinv);
                let (ainv, det) = inv2(a);
                (ainv, det)
            })
            .collect()
    }

    /// Stiffness weights `theta_q(p)`: 1 for the fixed part, then
    /// `(C_00, C_01, C_11)` per macro-triangle.
    pub fn theta(&self, p: &PmParams) -> Vec<f64> {
        let mut th = Vec::with_capacity(self.n_stiffness_terms());
        th.push(1.0);
        for (ainv, det) in self.maps(p) {
            let d = det.abs();
            // C = |det| A^-1 A^-T
            let c00 = d * (ainv[0][0] * ainv[0][0] + ainv[0][1] * ainv[0][1]);
            let c01 = d * (ainv[0][0] * ainv[1][0] + ainv[0][1] * ainv[1][1]);
            let c11 = d * (ainv[1][0] * ainv[1][0] + ainv[1][1] * ainv[1][1]);
            th.extend([c00, c01, c11]);
        }
        th
    }

    /// Magnet load weights: for each magnet macro-triangle the factors of
    /// its reference `∫ dN/dx` and `∫ dN/dy` vectors.
    pub fn rho_magnet(&self, p: &PmParams) -> Vec<[f64; 2]> {
        let maps = self.maps(p);
        let hy = self.materials.h_pm();
        self.magnet_terms
            .iter()
            .map(|t| {
                let (ainv, det) = maps[t.macro_id];
                let d = det.abs();
                // |det| A^-T, entry (0, l) = |det| ainv[l][0]
                [-hy * d * ainv[0][0], -hy * d * ainv[1][0]]
            })
            .collect()
    }

    /// `K(p) = sum_q theta_q(p) K_q` without any element loop.
    pub fn stiffness(&self, p: &PmParams) -> Result<CsrMatrix<'_>, FemError> {
        self.geometry.check_pm(p)?;
        let th = self.theta(p);
        let mut k = CsrMatrix {
            pattern: &self.mesh.pattern,
            values: self.k_fixed.clone(),
        };
        for (m, term) in self.k_terms.iter().enumerate() {
            let w = &th[1 + 3 * m..4 + 3 * m];
            for (n, &idx) in term.idx.iter().enumerate() {
                k.values[idx] +=
                    w[0] * term.parts[0][n] + w[1] * term.parts[1][n] + w[2] * term.parts[2][n];
            }
        }
        Ok(k)
    }

    pub fn sources(&self, e: &Excitation) -> Sources {
        match *e {
            Excitation::Magnets => Sources::magnets_only(),
            Excitation::DAxis(i) => {
                Sources::currents(self.winding.axis_currents(i, self.winding.d_axis))
            }
            Excitation::QAxis(i) => Sources::currents(
                self.winding
                    .axis_currents(i, self.winding.d_axis + 0.5 * std::f64::consts::PI),
            ),
            Excitation::Custom(s) => s,
        }
    }

    /// `rhs(p) = sum_k i_k j_k + magnets * sum_r rho_r(p) j_r`.
    pub fn rhs(&self, p: &PmParams, src: &Sources) -> Result<Vec<f64>, FemError> {
        self.geometry.check_pm(p)?;
        let mut rhs = vec![0.0; self.mesh.n_nodes()];
        for (k, load) in self.phase_load.iter().enumerate() {
            if src.currents[k] != 0.0 {
                for (r, x) in rhs.iter_mut().zip(load) {
                    *r += src.currents[k] * x;
                }
            }
        }
        if src.magnets != 0.0 {
            for (t, rho) in self.magnet_terms.iter().zip(self.rho_magnet(p)) {
                for (n, &node) in t.nodes.iter().enumerate() {
                    rhs[node] += src.magnets * (rho[0] * t.bx[n] + rho[1] * t.by[n]);
                }
            }
        }
        Ok(rhs)
    }

    /// Field solutions at `p` for several excitations sharing one
    /// factorization.
    pub fn solve(
        &self,
        p: &PmParams,
        excitations: &[Excitation],
    ) -> Result<Vec<FieldSolution>, FemError> {
        let k = self.stiffness(p)?;
        let f = self.plan.factor(&k)?;
        excitations
            .iter()
            .map(|e| Ok(f.solve(&self.rhs(p, &self.sources(e))?)))
            .collect()
    }

    /// Phase flux linkages `[psi_a, psi_b, psi_c]` of a solution.
    pub fn phase_flux(&self, u: &FieldSolution) -> [f64; 3] {
        [0, 1, 2].map(|k| dot(&self.flux[k], &u.u))
    }

    pub fn phase_fluxes(
        &self,
        p: &PmParams,
        excitations: &[Excitation],
    ) -> Result<Vec<[f64; 3]>, FemError> {
        Ok(self
            .solve(p, excitations)?
            .iter()
            .map(|u| self.phase_flux(u))
            .collect())
    }

    /// RMS d/q components of phase quantities.
    pub fn park(&self, x: &[f64; 3]) -> (f64, f64) {
        self.winding.park(x)
    }
}

/// Convenience: assembles `(K, rhs)` from the affine decomposition.
pub fn assemble_affine<'s>(
    sys: &'s AffineSystem,
    p: &PmParams,
    src: &Sources,
) -> Result<(CsrMatrix<'s>, Vec<f64>), FemError> {
    Ok((sys.stiffness(p)?, sys.rhs(p, src)?))
}

/// Regions of the deformable box, in macro-triangle order.
pub fn macro_regions() -> [Region; 10] {
    MACRO_REGIONS
}
