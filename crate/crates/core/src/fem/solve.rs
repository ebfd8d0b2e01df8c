//! Boundary-condition reduction and the sparse direct solve.
//!
//! Dirichlet nodes are eliminated (homogeneous), right-side nodes become
//! `-1` times their left partner, and the reduced SPD system is solved by an
//! envelope Cholesky factorization after reverse Cuthill-McKee reordering.

use super::geometry::{Phase, Winding};
use super::mesh::Mesh;
use super::sparse::{reverse_cuthill_mckee, CsrMatrix, CsrPattern, Envelope, EnvelopeCholesky};
use super::FemError;

/// Magnetic vector potential coefficients `u = l_z * A_z` (Wb).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub u: Vec<f64>,
}

/// Map from full node numbering to reduced unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    /// `(reduced index, sign)`, `None` for Dirichlet nodes.
    pub full_to_reduced: Vec<Option<(usize, f64)>>,
    pub n_reduced: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.n_nodes();
        let mut map: Vec<Option<(usize, f64)>> = vec![None; n];
        let mut slave = vec![false; n];
        for &(_, r) in &mesh.periodic {
            slave[r] = true;
        }
        let mut next = 0;
        for k in 0..n {
            if !mesh.boundary[k].is_dirichlet() && !slave[k] {
                map[k] = Some((next, 1.0));
                next += 1;
            }
        }
        for &(l, r) in &mesh.periodic {
            map[r] = map[l].map(|(i, s)| (i, -s));
        }
        Self {
            full_to_reduced: map,
            n_reduced: next,
        }
    }

    /// `u_full = P u_reduced`.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.full_to_reduced
            .iter()
            .map(|m| m.map_or(0.0, |(i, s)| s * x[i]))
            .collect()
    }

    /// `P^T f`.
    pub fn restrict(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced];
        for (m, v) in self.full_to_reduced.iter().zip(f) {
            if let Some((i, s)) = m {
                out[*i] += s * v;
            }
        }
        out
    }
}

/// Precomputed reduction, ordering and envelope of a mesh's matrix
/// pattern; reusable for every matrix on that pattern.
#[derive(Debug, Clone)]
pub struct SolverPlan {
    pub dofs: DofMap,
    /// `perm[new] = old` reduced index.
    perm: Vec<usize>,
    /// `inv[old] = new`.
    inv: Vec<usize>,
    env: Envelope,
    /// `(csr index, envelope index, sign)`.
    scatter: Vec<(usize, usize, f64)>,
}

impl SolverPlan {
    pub fn new(mesh: &Mesh) -> Self {
        let dofs = DofMap::new(mesh);
        let pattern = &mesh.pattern;
        let n = dofs.n_reduced;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for_each_reduced(pattern, &dofs, |_, ri, rj, _| {
            if ri != rj {
                adj[ri].push(rj);
            }
        });
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut entries = Vec::new();
        for_each_reduced(pattern, &dofs, |_, ri, rj, _| {
            entries.push((inv[ri], inv[rj]))
        });
        let env = Envelope::from_entries(n, entries);
        let mut scatter = Vec::new();
        for_each_reduced(pattern, &dofs, |k, ri, rj, s| {
            let (a, b) = (inv[ri], inv[rj]);
            // each lower entry once; the diagonal collects both orders
            if a >= b {
                scatter.push((k, env.index(a, b), s));
            }
        });
        scatter.sort_unstable_by_key(|e| e.1);
        Self {
            dofs,
            perm,
            inv,
            env,
            scatter,
        }
    }

    pub fn n_reduced(&self) -> usize {
        self.dofs.n_reduced
    }

    pub fn envelope_size(&self) -> usize {
        self.env.len()
    }

    /// Factorizes the reduced matrix `P^T K P`.
    pub fn factor(&self, k: &CsrMatrix) -> Result<Factorization<'_>, FemError> {
        let mut a = vec![0.0; self.env.len()];
        for &(ck, ek, s) in &self.scatter {
            a[ek] += s * k.values[ck];
        }
        Ok(Factorization {
            plan: self,
            chol: EnvelopeCholesky::factor(&self.env, a)?,
        })
    }
}

fn for_each_reduced(
    pattern: &CsrPattern,
    dofs: &DofMap,
    mut f: impl FnMut(usize, usize, usize, f64),
) {
    for i in 0..pattern.n {
        let Some((ri, si)) = dofs.full_to_reduced[i] else {
            continue;
        };
        for k in pattern.row(i) {
            let j = pattern.col_idx[k];
            if let Some((rj, sj)) = dofs.full_to_reduced[j] {
                f(k, ri, rj, si * sj);
            }
        }
    }
}

pub struct Factorization<'a> {
    plan: &'a SolverPlan,
    chol: EnvelopeCholesky<'a>,
}

impl Factorization<'_> {
    pub fn min_pivot(&self) -> f64 {
        self.chol.min_pivot()
    }

    /// Solves for one full-length right-hand side.
    pub fn solve(&self, rhs: &[f64]) -> FieldSolution {
        let plan = self.plan;
        let r = plan.dofs.restrict(rhs);
        let mut x: Vec<f64> = plan.perm.iter().map(|&old| r[old]).collect();
        self.chol.solve_in_place(&mut x);
        let xr: Vec<f64> = plan.inv.iter().map(|&new| x[new]).collect();
        FieldSolution {
            u: plan.dofs.expand(&xr),
        }
    }
}

/// One-shot solve of `K u = rhs` under the mesh's boundary conditions.
pub fn solve(mesh: &Mesh, k: &CsrMatrix, rhs: &[f64]) -> Result<FieldSolution, FemError> {
    if rhs.len() != mesh.n_nodes() || k.pattern.n != mesh.n_nodes() {
        return Err(FemError::Dimension {
            expected: mesh.n_nodes(),
            got: rhs.len(),
        });
    }
    let plan = SolverPlan::new(mesh);
    let f = plan.factor(k)?;
    Ok(f.solve(rhs))
}

/// `|P^T (K u - rhs)| / |P^T rhs|`.
pub fn relative_residual(mesh: &Mesh, k: &CsrMatrix, u: &FieldSolution, rhs: &[f64]) -> f64 {
    let dofs = DofMap::new(mesh);
    let ku = k.mul_vec(&u.u);
    let r: Vec<f64> = ku.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let norm = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let num = norm(dofs.restrict(&r));
    let den = norm(dofs.restrict(rhs));
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Flux-linkage weights `w` with `psi_phase = w · u` for the full machine:
/// slot-averaged potential, winding sign, conductor count and pole count.
pub fn flux_weights(mesh: &Mesh, winding: &Winding) -> Result<[Vec<f64>; 3], FemError> {
    let mut w = super::assembly::phase_vectors(mesh, winding)?;
    for v in &mut w {
        for x in v.iter_mut() {
            *x *= winding.poles;
        }
    }
    Ok(w)
}

/// Flux linkage of one phase (Wb).
pub fn flux_linkage(
    u: &FieldSolution,
    mesh: &Mesh,
    winding: &Winding,
    phase: Phase,
) -> Result<f64, FemError> {
    let w = flux_weights(mesh, winding)?;
    Ok(dot(&w[phase.index()], &u.u))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
