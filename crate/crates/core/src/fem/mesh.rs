//! Triangulations: a structured rectangle grid plus, for the machine pole,
//! a deformable box around the magnet built from ten macro-triangles.
//!
//! Each macro-triangle is subdivided uniformly in barycentric coordinates,
//! so every node inside the box is an affine function of the box vertices
//! and every element of a macro-triangle shares its affine map.

use std::collections::HashMap;
use std::io::Write;

use super::geometry::{PmParams, PoleGeometry, BASE_CELLS, BOX_CELLS, LAYER_ROWS, SLOTS};
use super::sparse::CsrPattern;
use super::FemError;
use crate::cycle::fmt_num;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    RotorIron,
    StatorIron,
    AirGap,
    /// Air flux barrier beside the magnet.
    Barrier,
    Magnet,
    /// Winding slot `k` of the [`Winding`](super::Winding).
    Slot(u8),
    Air,
}

impl Region {
    pub fn name(&self) -> String {
        match self {
            Region::RotorIron => "rotor_iron".into(),
            Region::StatorIron => "stator_iron".into(),
            Region::AirGap => "air_gap".into(),
            Region::Barrier => "barrier".into(),
            Region::Magnet => "magnet".into(),
            Region::Slot(k) => format!("slot{k}"),
            Region::Air => "air".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    /// Dirichlet, bottom edge.
    Shaft,
    /// Dirichlet, top edge.
    Stator,
    /// Antiperiodic master side.
    Left,
    /// Antiperiodic slave side.
    Right,
}

impl BoundaryTag {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryTag::Interior => "none",
            BoundaryTag::Shaft => "shaft",
            BoundaryTag::Stator => "stator",
            BoundaryTag::Left => "left",
            BoundaryTag::Right => "right",
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryTag::Shaft | BoundaryTag::Stator)
    }
}

/// How a node moves with the magnet parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeMap {
    Fixed,
    /// Convex combination of deformable-box vertices.
    Mapped {
        verts: [u8; 3],
        lambda: [f64; 3],
    },
}

/// Macro-triangulation of the deformable box: vertex ids 0..4 are the box
/// corners, 4..8 the magnet corners.
pub const MACRO_TRIS: [[u8; 3]; 10] = [
    [0, 1, 5],
    [0, 5, 4],
    [1, 2, 6],
    [1, 6, 5],
    [2, 3, 7],
    [2, 7, 6],
    [3, 0, 4],
    [3, 4, 7],
    [4, 5, 6],
    [4, 6, 7],
];

pub const MACRO_REGIONS: [Region; 10] = [
    Region::RotorIron,
    Region::RotorIron,
    Region::Barrier,
    Region::Barrier,
    Region::RotorIron,
    Region::RotorIron,
    Region::Barrier,
    Region::Barrier,
    Region::Magnet,
    Region::Magnet,
];

/// Reference configuration of the deformable box.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableBox {
    pub geometry: PoleGeometry,
    pub reference: PmParams,
}

impl DeformableBox {
    pub fn vertices(&self, p: &PmParams) -> [[f64; 2]; 8] {
        self.geometry.box_vertices(p)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Reference node coordinates (m).
    pub nodes: Vec<[f64; 2]>,
    pub tris: Vec<[usize; 3]>,
    pub regions: Vec<Region>,
    /// Macro-triangle of each element, `None` in the fixed region.
    pub blocks: Vec<Option<u8>>,
    pub boundary: Vec<BoundaryTag>,
    /// `(left, right)` node pairs with `u_right = -u_left`.
    pub periodic: Vec<(usize, usize)>,
    pub node_map: Vec<NodeMap>,
    pub deformable: Option<DeformableBox>,
    pub pattern: CsrPattern,
    pub level: usize,
}

/// Tensor-grid bookkeeping shared by the rectangle and pole builders.
struct Grid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    id: Vec<Option<usize>>,
}

impl Grid {
    fn node(&self, ix: usize, iy: usize) -> usize {
        self.id[iy * self.xs.len() + ix].expect("grid node exists")
    }
}

/// Uniformly subdivided breakpoints: `segments` is `(end, rows)` starting
/// from `start`.
fn lines(start: f64, segments: &[(f64, usize)]) -> Vec<f64> {
    let mut out = vec![start];
    let mut a = start;
    for &(b, n) in segments {
        for k in 1..=n {
            out.push(if k == n {
                b
            } else {
                a + (b - a) * k as f64 / n as f64
            });
        }
        a = b;
    }
    out
}

struct Builder {
    nodes: Vec<[f64; 2]>,
    boundary: Vec<BoundaryTag>,
    node_map: Vec<NodeMap>,
    tris: Vec<[usize; 3]>,
    regions: Vec<Region>,
    blocks: Vec<Option<u8>>,
}

impl Builder {
    /// Grid nodes and elements, skipping nodes strictly inside `hole` and
    /// cells inside it (`hole` in cell indices `(x0, x1, y0, y1)`).
    fn grid(
        xs: Vec<f64>,
        ys: Vec<f64>,
        hole: Option<(usize, usize, usize, usize)>,
        region: impl Fn(usize, usize) -> Region,
    ) -> (Self, Grid) {
        let (nx, ny) = (xs.len() - 1, ys.len() - 1);
        let mut b = Builder {
            nodes: Vec::new(),
            boundary: Vec::new(),
            node_map: Vec::new(),
            tris: Vec::new(),
            regions: Vec::new(),
            blocks: Vec::new(),
        };
        let mut id = vec![None; xs.len() * ys.len()];
        let inside = |ix: usize, iy: usize| {
            hole.is_some_and(|(x0, x1, y0, y1)| ix > x0 && ix < x1 && iy > y0 && iy < y1)
        };
        for iy in 0..=ny {
            for ix in 0..=nx {
                if inside(ix, iy) {
                    continue;
                }
                let tag = if iy == 0 {
                    BoundaryTag::Shaft
                } else if iy == ny {
                    BoundaryTag::Stator
                } else if ix == 0 {
                    BoundaryTag::Left
                } else if ix == nx {
                    BoundaryTag::Right
                } else {
                    BoundaryTag::Interior
                };
                id[iy * xs.len() + ix] = Some(b.nodes.len());
                b.nodes.push([xs[ix], ys[iy]]);
                b.boundary.push(tag);
                b.node_map.push(NodeMap::Fixed);
            }
        }
        let grid = Grid { xs, ys, id };
        for iy in 0..ny {
            for ix in 0..nx {
                if hole.is_some_and(|(x0, x1, y0, y1)| ix >= x0 && ix < x1 && iy >= y0 && iy < y1) {
                    continue;
                }
                let a = grid.node(ix, iy);
                let bb = grid.node(ix + 1, iy);
                let c = grid.node(ix + 1, iy + 1);
                let d = grid.node(ix, iy + 1);
                let r = region(ix, iy);
                b.push_tri([a, bb, c], r, None);
                b.push_tri([a, c, d], r, None);
            }
        }
        (b, grid)
    }

    fn push_tri(&mut self, t: [usize; 3], r: Region, block: Option<u8>) {
        self.tris.push(t);
        self.regions.push(r);
        self.blocks.push(block);
    }

    fn finish(self, grid: &Grid, deformable: Option<DeformableBox>, level: usize) -> Mesh {
        let (nx, ny) = (grid.xs.len() - 1, grid.ys.len() - 1);
        let periodic = (1..ny)
            .map(|iy| (grid.node(0, iy), grid.node(nx, iy)))
            .collect();
        let pattern = CsrPattern::from_triangles(self.nodes.len(), &self.tris);
        Mesh {
            nodes: self.nodes,
            tris: self.tris,
            regions: self.regions,
            blocks: self.blocks,
            boundary: self.boundary,
            periodic,
            node_map: self.node_map,
            deformable,
            pattern,
            level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Vertex(u8),
    /// Edge `(a, b)` with `a < b`, `k` steps from `a`.
    Edge(u8, u8, usize),
    Interior(u8, usize, usize),
}

impl Mesh {
    /// Rectangle `[0, xs.last] x [0, ys.last]` on the given grid lines with
    /// Dirichlet top/bottom and antiperiodic left/right sides.
    pub fn rectangle(
        xs: Vec<f64>,
        ys: Vec<f64>,
        region: impl Fn(usize, usize) -> Region,
    ) -> Result<Mesh, FemError> {
        if xs.len() < 2 || ys.len() < 3 {
            return Err(FemError::Geometry(
                "rectangle needs at least one column and two rows".into(),
            ));
        }
        let (b, grid) = Builder::grid(xs, ys, None, region);
        let mesh = b.finish(&grid, None, 0);
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node coordinates with the magnet at `p`. Identical to the reference
    /// coordinates for meshes without a deformable box.
    pub fn mapped_nodes(&self, p: &PmParams) -> Vec<[f64; 2]> {
        let Some(db) = &self.deformable else {
            return self.nodes.clone();
        };
        let v = db.vertices(p);
        self.nodes
            .iter()
            .zip(&self.node_map)
            .map(|(x, m)| match m {
                NodeMap::Fixed => *x,
                NodeMap::Mapped { verts, lambda } => {
                    let mut y = [0.0; 2];
                    for (&vi, &l) in verts.iter().zip(lambda) {
                        y[0] += l * v[vi as usize][0];
                        y[1] += l * v[vi as usize][1];
                    }
                    y
                }
            })
            .collect()
    }

    /// Signed element areas for the given coordinates.
    pub fn areas(&self, nodes: &[[f64; 2]]) -> Vec<f64> {
        self.tris
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| nodes[i]);
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            })
            .collect()
    }

    /// Checks orientation, boundary tagging and periodic node matching.
    pub fn validate(&self) -> Result<(), FemError> {
        self.validate_nodes(&self.nodes)
    }

    pub fn validate_nodes(&self, nodes: &[[f64; 2]]) -> Result<(), FemError> {
        for (k, a) in self.areas(nodes).iter().enumerate() {
            if !(*a > 0.0) {
                return Err(FemError::Mesh(format!(
                    "triangle {k} is not positively oriented (area {a})"
                )));
            }
        }
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.tris {
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((e.0.min(e.1), e.0.max(e.1))).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            if count > 2 {
                return Err(FemError::Mesh(format!(
                    "edge ({a}, {b}) shared by {count} triangles"
                )));
            }
            if count == 1
                && (self.boundary[a] == BoundaryTag::Interior
                    || self.boundary[b] == BoundaryTag::Interior)
            {
                return Err(FemError::Mesh(format!(
                    "boundary edge ({a}, {b}) is untagged"
                )));
            }
        }
        for &(l, r) in &self.periodic {
            if self.boundary[l] != BoundaryTag::Left || self.boundary[r] != BoundaryTag::Right {
                return Err(FemError::Mesh(format!(
                    "periodic pair ({l}, {r}) has wrong tags"
                )));
            }
            if nodes[l][1] != nodes[r][1] {
                return Err(FemError::Mesh(format!(
                    "periodic pair ({l}, {r}) is not node-matched"
                )));
            }
        }
        Ok(())
    }

    /// Writes `nodes.csv` (`id,x,y,boundary_tag`) content.
    pub fn write_nodes_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,x,y,boundary_tag")?;
        for (k, (x, tag)) in self.nodes.iter().zip(&self.boundary).enumerate() {
            writeln!(
                out,
                "{k},{},{},{}",
                fmt_num(x[0]),
                fmt_num(x[1]),
                tag.name()
            )?;
        }
        Ok(())
    }

    /// Writes `tris.csv` (`n1,n2,n3,region`) content.
    pub fn write_tris_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n1,n2,n3,region")?;
        for (t, r) in self.tris.iter().zip(&self.regions) {
            writeln!(out, "{},{},{},{}", t[0], t[1], t[2], r.name())?;
        }
        Ok(())
    }
}

/// Reference triangulation of the pole template at refinement `level`
/// (each level halves every element edge), with the magnet at `p_ref`.
pub fn build_reference_mesh(
    geom: &PoleGeometry,
    p_ref: &PmParams,
    level: usize,
) -> Result<Mesh, FemError> {
    geom.validate()?;
    geom.check_pm(p_ref)?;
    if level > 6 {
        return Err(FemError::Geometry(format!(
            "refinement level {level} is too fine"
        )));
    }
    let s = 1usize << level;
    let tau = geom.pole_pitch();
    let xs = lines(0.0, &[(tau, BASE_CELLS * s)]);
    let y_box0 = geom.magnet_box_bottom;
    let y_rotor = geom.rotor_thickness();
    let y_gap = geom.r_stator_in - geom.r_shaft;
    let y_slot = y_gap + geom.slot_depth;
    let ys = lines(
        0.0,
        &[
            (y_box0, LAYER_ROWS[0] * s),
            (y_rotor, LAYER_ROWS[1] * s),
            (y_gap, LAYER_ROWS[2] * s),
            (y_slot, LAYER_ROWS[3] * s),
            (geom.height(), LAYER_ROWS[4] * s),
        ],
    );
    let row_end: Vec<usize> = LAYER_ROWS
        .iter()
        .scan(0, |acc, r| {
            *acc += r * s;
            Some(*acc)
        })
        .collect();
    let hole = (BOX_CELLS.0 * s, BOX_CELLS.1 * s, row_end[0], row_end[1]);
    let region = |ix: usize, iy: usize| {
        if iy < row_end[1] {
            Region::RotorIron
        } else if iy < row_end[2] {
            Region::AirGap
        } else if iy < row_end[3] {
            let cell = ix / s;
            SLOTS
                .iter()
                .position(|&(a, b, _, _)| cell >= a && cell < b)
                .map_or(Region::StatorIron, |k| Region::Slot(k as u8))
        } else {
            Region::StatorIron
        }
    };
    let (mut b, grid) = Builder::grid(xs, ys, Some(hole), region);

    // Box fill. Outer box vertices and edges reuse the grid nodes.
    let n = BOX_CELLS.1 * s - BOX_CELLS.0 * s;
    debug_assert_eq!(n, row_end[1] - row_end[0]);
    let (ixl, ixr, iy0, iy1) = hole;
    let outer = |key: Key| -> Option<usize> {
        let (ix, iy) = match key {
            Key::Vertex(0) => (ixl, iy0),
            Key::Vertex(1) => (ixr, iy0),
            Key::Vertex(2) => (ixr, iy1),
            Key::Vertex(3) => (ixl, iy1),
            Key::Edge(0, 1, k) => (ixl + k, iy0),
            Key::Edge(1, 2, k) => (ixr, iy0 + k),
            Key::Edge(2, 3, k) => (ixr - k, iy1),
            Key::Edge(0, 3, k) => (ixl, iy0 + k),
            _ => return None,
        };
        Some(grid.node(ix, iy))
    };
    let db = DeformableBox {
        geometry: *geom,
        reference: *p_ref,
    };
    let vref = db.vertices(p_ref);
    let mut ids: HashMap<Key, usize> = HashMap::new();
    for (m, (tri, &reg)) in MACRO_TRIS.iter().zip(&MACRO_REGIONS).enumerate() {
        let mut local = vec![vec![0usize; n + 1]; n + 1];
        for i in 0..=n {
            for j in 0..=n - i {
                let l0 = n - i - j;
                let (key, verts, lambda) = if i == 0 && j == 0 {
                    (Key::Vertex(tri[0]), [tri[0]; 3], [1.0, 0.0, 0.0])
                } else if l0 == 0 && j == 0 {
                    (Key::Vertex(tri[1]), [tri[1]; 3], [1.0, 0.0, 0.0])
                } else if l0 == 0 && i == 0 {
                    (Key::Vertex(tri[2]), [tri[2]; 3], [1.0, 0.0, 0.0])
                } else {
                    // edge through vertices (va, vb) at k steps from va
                    let edge = if j == 0 {
                        Some((tri[0], tri[1], i))
                    } else if i == 0 {
                        Some((tri[0], tri[2], j))
                    } else if l0 == 0 {
                        Some((tri[1], tri[2], j))
                    } else {
                        None
                    };
                    match edge {
                        Some((va, vb, k)) => {
                            let (a, bb, ka) = if va < vb {
                                (va, vb, k)
                            } else {
                                (vb, va, n - k)
                            };
                            let t = ka as f64 / n as f64;
                            (Key::Edge(a, bb, ka), [a, bb, a], [1.0 - t, t, 0.0])
                        }
                        None => (
                            Key::Interior(m as u8, i, j),
                            *tri,
                            [
                                l0 as f64 / n as f64,
                                i as f64 / n as f64,
                                j as f64 / n as f64,
                            ],
                        ),
                    }
                };
                let id = if let Some(id) = outer(key) {
                    id
                } else {
                    *ids.entry(key).or_insert_with(|| {
                        let mut x = [0.0; 2];
                        for (&v, &l) in verts.iter().zip(&lambda) {
                            x[0] += l * vref[v as usize][0];
                            x[1] += l * vref[v as usize][1];
                        }
                        b.nodes.push(x);
                        b.boundary.push(BoundaryTag::Interior);
                        b.node_map.push(NodeMap::Mapped { verts, lambda });
                        b.nodes.len() - 1
                    })
                };
                local[i][j] = id;
            }
        }
        for i in 0..n {
            for j in 0..n - i {
                b.push_tri(
                    [local[i][j], local[i + 1][j], local[i][j + 1]],
                    reg,
                    Some(m as u8),
                );
                if i + j + 1 < n {
                    b.push_tri(
                        [local[i + 1][j], local[i + 1][j + 1], local[i][j + 1]],
                        reg,
                        Some(m as u8),
                    );
                }
            }
        }
    }
    let mesh = b.finish(&grid, Some(db), level);
    mesh.validate()?;
    Ok(mesh)
}
