//! Element-loop assembly of the P1 stiffness matrix and source vectors.
//!
//! The unknown is `u = l_z * A_z` (Wb), so the stiffness carries a factor
//! `1 / l_z` and the right-hand side is per unit length.

use super::geometry::{Materials, PmParams, Winding};
use super::mesh::{Mesh, Region};
use super::sparse::CsrMatrix;
use super::FemError;

/// Area and unnormalised shape-function gradients `(b_i, c_i)` of a linear
/// triangle: `grad N_i = (b_i, c_i) / (2 area)`.
pub fn p1_gradients(x: [[f64; 2]; 3]) -> (f64, [f64; 3], [f64; 3]) {
    let b = [x[1][1] - x[2][1], x[2][1] - x[0][1], x[0][1] - x[1][1]];
    let c = [x[2][0] - x[1][0], x[0][0] - x[2][0], x[1][0] - x[0][0]];
    let area = 0.5 * (x[0][0] * b[0] + x[1][0] * b[1] + x[2][0] * b[2]);
    (area, b, c)
}

/// `∫ nu grad N_i · grad N_j` over one triangle.
pub fn element_stiffness(x: [[f64; 2]; 3], nu: f64) -> [[f64; 3]; 3] {
    let (area, b, c) = p1_gradients(x);
    let s = nu / (4.0 * area);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = s * (b[i] * b[j] + c[i] * c[j]);
        }
    }
    k
}

pub fn reluctivity(region: Region, mat: &Materials) -> f64 {
    match region {
        Region::RotorIron | Region::StatorIron => mat.nu_iron(),
        Region::Magnet => mat.nu_magnet(),
        Region::AirGap | Region::Barrier | Region::Slot(_) | Region::Air => mat.nu_air(),
    }
}

/// Excitation of one field solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sources {
    /// Scale of the magnet source field (1 = on, 0 = off).
    pub magnets: f64,
    /// Instantaneous phase currents (A).
    pub currents: [f64; 3],
}

impl Sources {
    pub const NONE: Sources = Sources {
        magnets: 0.0,
        currents: [0.0; 3],
    };

    pub fn magnets_only() -> Self {
        Sources {
            magnets: 1.0,
            ..Self::NONE
        }
    }

    pub fn currents(currents: [f64; 3]) -> Self {
        Sources {
            magnets: 0.0,
            currents,
        }
    }
}

/// Element areas summed per winding slot.
pub fn slot_areas(mesh: &Mesh, winding: &Winding) -> Vec<f64> {
    let mut areas = vec![0.0; winding.slots.len()];
    for (a, r) in mesh.areas(&mesh.nodes).iter().zip(&mesh.regions) {
        if let Region::Slot(k) = r {
            areas[*k as usize] += a;
        }
    }
    areas
}

/// `∫ N_i` over the slots of one phase, weighted by `sign * turns / area`:
/// the load vector of a unit phase current and, up to the pole count, the
/// flux-linkage functional of that phase.
pub fn phase_vectors(mesh: &Mesh, winding: &Winding) -> Result<[Vec<f64>; 3], FemError> {
    let slot_area = slot_areas(mesh, winding);
    if slot_area.iter().any(|a| !(*a > 0.0)) {
        return Err(FemError::Mesh("every winding slot needs elements".into()));
    }
    let mut v = [
        vec![0.0; mesh.n_nodes()],
        vec![0.0; mesh.n_nodes()],
        vec![0.0; mesh.n_nodes()],
    ];
    let areas = mesh.areas(&mesh.nodes);
    for ((t, r), a) in mesh.tris.iter().zip(&mesh.regions).zip(&areas) {
        if let Region::Slot(k) = r {
            let spec = winding
                .slots
                .get(*k as usize)
                .ok_or_else(|| FemError::Mesh(format!("slot {k} has no winding entry")))?;
            let w = spec.sign * winding.turns / slot_area[*k as usize] * a / 3.0;
            for &n in t {
                v[spec.phase.index()][n] += w;
            }
        }
    }
    Ok(v)
}

/// Magnet load vector `∫ (H_x dN/dy - H_y dN/dx)` for a unit-scaled magnet
/// field pointing in `+y`, on the given node coordinates.
pub fn magnet_vector(mesh: &Mesh, nodes: &[[f64; 2]], mat: &Materials) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_nodes()];
    let hy = mat.h_pm();
    for (t, r) in mesh.tris.iter().zip(&mesh.regions) {
        if *r != Region::Magnet {
            continue;
        }
        let (_, b, _) = p1_gradients(t.map(|i| nodes[i]));
        // ∫ dN_i/dx = b_i / 2
        for k in 0..3 {
            f[t[k]] -= hy * 0.5 * b[k];
        }
    }
    f
}

/// Assembles the stiffness matrix on arbitrary node coordinates.
pub fn assemble_stiffness<'m>(
    mesh: &'m Mesh,
    nodes: &[[f64; 2]],
    mat: &Materials,
    l_z: f64,
) -> CsrMatrix<'m> {
    let mut k = CsrMatrix::zeros(&mesh.pattern);
    for (t, r) in mesh.tris.iter().zip(&mesh.regions) {
        let ke = element_stiffness(t.map(|i| nodes[i]), reluctivity(*r, mat) / l_z);
        for a in 0..3 {
            for b in 0..3 {
                let idx = mesh
                    .pattern
                    .index(t[a], t[b])
                    .expect("pattern covers element");
                k.values[idx] += ke[a][b];
            }
        }
    }
    k
}

/// Right-hand side `j_src + j_pm(p)` assembled by element loops.
pub fn assemble_rhs(
    mesh: &Mesh,
    nodes: &[[f64; 2]],
    mat: &Materials,
    winding: &Winding,
    src: &Sources,
) -> Result<Vec<f64>, FemError> {
    let mut rhs = vec![0.0; mesh.n_nodes()];
    if src.currents.iter().any(|&i| i != 0.0) {
        let phase = phase_vectors(mesh, winding)?;
        for (k, v) in phase.iter().enumerate() {
            for (r, x) in rhs.iter_mut().zip(v) {
                *r += src.currents[k] * x;
            }
        }
    }
    if src.magnets != 0.0 {
        for (r, x) in rhs.iter_mut().zip(magnet_vector(mesh, nodes, mat)) {
            *r += src.magnets * x;
        }
    }
    Ok(rhs)
}

/// Direct assembly on the mesh mapped to magnet parameters `p`.
pub fn assemble_direct<'m>(
    mesh: &'m Mesh,
    p: &PmParams,
    mat: &Materials,
    winding: &Winding,
    l_z: f64,
    src: &Sources,
) -> Result<(CsrMatrix<'m>, Vec<f64>), FemError> {
    if let Some(db) = &mesh.deformable {
        db.geometry.check_pm(p)?;
    }
    let nodes = mesh.mapped_nodes(p);
    let k = assemble_stiffness(mesh, &nodes, mat, l_z);
    let rhs = assemble_rhs(mesh, &nodes, mat, winding, src)?;
    Ok((k, rhs))
}
