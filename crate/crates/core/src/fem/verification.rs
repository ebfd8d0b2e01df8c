//! Manufactured verification problem with a closed-form solution.
//!
//! A uniform layer magnetized in `+y` spans the full width of an
//! antiperiodic strip between two air layers, with `u = 0` at top and
//! bottom. Its antiperiodic extension is a square wave in `x`, and the
//! potential is the Fourier series
//! `u = (4 H l_z / (L nu)) sum_{n odd} cos(k_n x) g_n(y)`, `k_n = n pi / L`,
//! where `g_n` integrates the Green's function of `-(d²/dy² - k²)` on
//! `[0, H]` over the layer.

use super::assembly::{assemble_rhs, assemble_stiffness, Sources};
use super::geometry::{Materials, Phase, SlotSpec, Winding};
use super::mesh::{Mesh, Region};
use super::solve::{solve, FieldSolution};
use super::FemError;
use crate::quadrature::gauss_legendre;
use std::f64::consts::PI;

/// Slab geometry; all materials have the permeability of free space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub width: f64,
    pub air_below: f64,
    pub magnet: f64,
    pub air_above: f64,
    pub br: f64,
    pub l_z: f64,
    /// Fourier terms (odd `n` up to `2 * terms - 1`) before the tail
    /// correction.
    pub terms: usize,
}

impl Default for Slab {
    fn default() -> Self {
        Self {
            width: 0.04,
            air_below: 0.01,
            magnet: 0.005,
            air_above: 0.01,
            br: 1.0,
            l_z: 0.05,
            terms: 2000,
        }
    }
}

/// Base grid: 16 columns, rows 4 / 4 / 4 for the three layers.
const BASE: (usize, [usize; 3]) = (16, [4, 4, 4]);
/// Coil window: base columns and rows (inside the upper air layer).
const COIL_COLS: [(usize, usize); 2] = [(2, 6), (10, 14)];
const COIL_ROWS: (usize, usize) = (9, 11);

impl Slab {
    fn height(&self) -> f64 {
        self.air_below + self.magnet + self.air_above
    }

    fn layer(&self) -> (f64, f64) {
        (self.air_below, self.air_below + self.magnet)
    }

    fn materials(&self) -> Materials {
        Materials {
            mu_r_iron: 1.0,
            mu_r_magnet: 1.0,
            br: self.br,
        }
    }

    /// One coil of a single phase: positive side in the left window,
    /// negative side in the right window.
    pub fn winding(&self) -> Winding {
        Winding {
            slots: vec![
                SlotSpec {
                    phase: Phase::A,
                    sign: 1.0,
                    angle: 0.0,
                },
                SlotSpec {
                    phase: Phase::A,
                    sign: -1.0,
                    angle: 0.0,
                },
            ],
            turns: 10.0,
            poles: 2.0,
            d_axis: 0.5 * PI,
        }
    }

    pub fn mesh(&self, level: usize) -> Result<Mesh, FemError> {
        let s = 1usize << level;
        let (nx, rows) = BASE;
        let xs: Vec<f64> = (0..=nx * s)
            .map(|i| self.width * i as f64 / (nx * s) as f64)
            .collect();
        let mut ys = vec![0.0];
        let mut y = 0.0;
        for (t, r) in [self.air_below, self.magnet, self.air_above]
            .iter()
            .zip(rows)
        {
            for k in 1..=r * s {
                ys.push(y + t * k as f64 / (r * s) as f64);
            }
            y += t;
        }
        let (m0, m1) = (rows[0] * s, (rows[0] + rows[1]) * s);
        Mesh::rectangle(xs, ys, |ix, iy| {
            if iy >= m0 && iy < m1 {
                return Region::Magnet;
            }
            let (cx, cy) = (ix / s, iy / s);
            if cy >= COIL_ROWS.0 && cy < COIL_ROWS.1 {
                if let Some(k) = COIL_COLS.iter().position(|&(a, b)| cx >= a && cx < b) {
                    return Region::Slot(k as u8);
                }
            }
            Region::Air
        })
    }

    pub fn solve(&self, mesh: &Mesh) -> Result<FieldSolution, FemError> {
        let mat = self.materials();
        let k = assemble_stiffness(mesh, &mesh.nodes, &mat, self.l_z);
        let rhs = assemble_rhs(
            mesh,
            &mesh.nodes,
            &mat,
            &self.winding(),
            &Sources::magnets_only(),
        )?;
        solve(mesh, &k, &rhs)
    }

    fn amplitude(&self) -> f64 {
        let mat = self.materials();
        4.0 * mat.h_pm() * self.l_z / (self.width * mat.nu_air())
    }

    /// `∫ G_k(y, eta) d eta` over the magnet layer.
    fn layer_integral(&self, k: f64, y: f64) -> f64 {
        let h = self.height();
        let (a, b) = self.layer();
        let e = |z: f64| (-k * z).exp();
        let den = 2.0 * k * k * (1.0 - e(2.0 * h));
        let lower =
            |eta: f64| e(y - eta) - e(2.0 * h - y - eta) + e(y + eta) - e(2.0 * h - y + eta);
        let upper =
            |eta: f64| -e(eta - y) - e(2.0 * h - eta - y) + e(eta + y) + e(2.0 * h - eta + y);
        let mut s = 0.0;
        if y > a {
            s += lower(y.min(b)) - lower(a);
        }
        if y < b {
            s += upper(b) - upper(y.max(a));
        }
        s / den
    }

    /// Closed-form potential at `(x, y)`.
    pub fn analytic(&self, x: f64, y: f64) -> f64 {
        let l = self.width;
        let (a, b) = self.layer();
        // the layer integral tends to c / k^2; that tail is summed exactly
        let c = if y > a && y < b {
            1.0
        } else if y == a || y == b {
            0.5
        } else {
            0.0
        };
        let mut s = 0.0;
        for j in 0..self.terms {
            let k = (2 * j + 1) as f64 * PI / l;
            s += (k * x).cos() * (self.layer_integral(k, y) - c / (k * k));
        }
        // sum_{n odd} cos(k_n x) / k_n^2 = L (L - 2x) / 8 on [0, L]
        s += c * l * (l - 2.0 * x) / 8.0;
        self.amplitude() * s
    }

    /// Relative nodal L2 error of a solution against [`analytic`](Self::analytic).
    pub fn nodal_error(&self, mesh: &Mesh, u: &FieldSolution) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (x, uh) in mesh.nodes.iter().zip(&u.u) {
            let ua = self.analytic(x[0], x[1]);
            num += (uh - ua) * (uh - ua);
            den += ua * ua;
        }
        (num / den).sqrt()
    }

    /// Closed-form flux linkage of the coil.
    pub fn analytic_flux(&self) -> f64 {
        let w = self.winding();
        let dx = self.width / BASE.0 as f64;
        let (rows, layers) = (BASE.1, [self.air_below, self.magnet, self.air_above]);
        let row_top = self.air_below + self.magnet;
        let dy = layers[2] / rows[2] as f64;
        let y0 = row_top + dy * (COIL_ROWS.0 - rows[0] - rows[1]) as f64;
        let y1 = row_top + dy * (COIL_ROWS.1 - rows[0] - rows[1]) as f64;
        let (gx, gw) = gauss_legendre(24);
        let mut psi = 0.0;
        for (spec, &(c0, c1)) in w.slots.iter().zip(&COIL_COLS) {
            let (x0, x1) = (c0 as f64 * dx, c1 as f64 * dx);
            let mut avg = 0.0;
            for j in 0..self.terms {
                let k = (2 * j + 1) as f64 * PI / self.width;
                let ax = ((k * x1).sin() - (k * x0).sin()) / (k * (x1 - x0));
                let ay: f64 = gx
                    .iter()
                    .zip(&gw)
                    .map(|(t, wt)| {
                        0.5 * wt * self.layer_integral(k, 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * t)
                    })
                    .sum();
                avg += ax * ay;
            }
            psi += spec.sign * avg * self.amplitude();
        }
        psi * w.turns * w.poles
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::solve::flux_linkage;

    #[test]
    fn analytic_solution_is_antiperiodic_and_vanishes_on_dirichlet_sides() {
        let s = Slab::default();
        for y in [0.003, 0.012, 0.02] {
            let l = s.analytic(0.0, y);
            let r = s.analytic(s.width, y);
            assert!((l + r).abs() < 1e-9 * l.abs().max(1e-30));
        }
        assert!(s.analytic(0.01, 0.0).abs() < 1e-12);
        assert!(s.analytic(0.01, s.height()).abs() < 1e-12);
    }

    #[test]
    fn slab_converges() {
        let s = Slab::default();
        let errs: Vec<f64> = (0..3)
            .map(|l| {
                let m = s.mesh(l).unwrap();
                let u = s.solve(&m).unwrap();
                s.nodal_error(&m, &u)
            })
            .collect();
        assert!(errs[2] < 0.01, "{errs:?}");
        assert!(
            errs[0] / errs[1] >= 3.0 && errs[1] / errs[2] >= 3.0,
            "{errs:?}"
        );
    }

    #[test]
    fn slab_flux_matches() {
        let s = Slab::default();
        let m = s.mesh(2).unwrap();
        let u = s.solve(&m).unwrap();
        let psi = flux_linkage(&u, &m, &s.winding(), Phase::A).unwrap();
        let exact = s.analytic_flux();
        assert!(((psi - exact) / exact).abs() < 0.01, "{psi} vs {exact}");
    }
}
