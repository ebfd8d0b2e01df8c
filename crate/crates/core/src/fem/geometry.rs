//! Single-pole machine template, materials and PM block parameters.
//!
//! The pole is unrolled at the mean air-gap radius into a rectangle
//! `x in [0, tau]`, `y in [0, r_stator_out - r_shaft]` with `y` measured
//! outward from the shaft. Electrical angle is `pi * x / tau`.

use std::f64::consts::PI;

use super::FemError;

pub const MU0: f64 = 4.0e-7 * PI;

/// PM block width `p1`, height `p2` and depth below the rotor surface
/// `p3`, all in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl PmParams {
    pub const fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self { p1, p2, p3 }
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self::new(p[0], p[1], p[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }

    /// Cross-section area in mm².
    pub fn area(&self) -> f64 {
        self.p1 * self.p2
    }
}

/// Phase of the three-phase winding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self, FemError> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "u" => Ok(Phase::A),
            "b" | "v" => Ok(Phase::B),
            "c" | "w" => Ok(Phase::C),
            other => Err(FemError::UnknownPhase(other.into())),
        }
    }
}

/// One winding slot: which phase it carries and the conductor direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotSpec {
    pub phase: Phase,
    pub sign: f64,
    /// Electrical angle of the slot centre (rad).
    pub angle: f64,
}

/// Winding data needed for current sources and flux linkage.
#[derive(Debug, Clone, PartialEq)]
pub struct Winding {
    /// Indexed by the `k` of `Region::Slot(k)`.
    pub slots: Vec<SlotSpec>,
    /// Conductors per slot.
    pub turns: f64,
    /// Number of poles of the full machine.
    pub poles: f64,
    /// Electrical angle of the d-axis (magnet centre).
    pub d_axis: f64,
}

impl Winding {
    /// Electrical angle of each phase's magnetic axis. A conductor pair
    /// with its positive side at angle `a` links flux centred at `a + pi/2`.
    pub fn phase_axes(&self) -> [f64; 3] {
        let mut axes = [0.0; 3];
        for ph in Phase::ALL {
            let s = self
                .slots
                .iter()
                .find(|s| s.phase == ph)
                .expect("every phase has a slot");
            let plus = if s.sign > 0.0 { s.angle } else { s.angle + PI };
            axes[ph.index()] = (plus + 0.5 * PI).rem_euclid(2.0 * PI);
        }
        axes
    }

    /// Instantaneous phase currents for a current vector of RMS magnitude
    /// `i_rms` along electrical angle `axis`.
    pub fn axis_currents(&self, i_rms: f64, axis: f64) -> [f64; 3] {
        let peak = std::f64::consts::SQRT_2 * i_rms;
        self.phase_axes().map(|a| peak * (a - axis).cos())
    }

    /// RMS d- and q-components of a set of phase quantities
    /// (amplitude-invariant Park transform).
    pub fn park(&self, x: &[f64; 3]) -> (f64, f64) {
        let axes = self.phase_axes();
        let proj = |axis: f64| {
            2.0 / 3.0 * (0..3).map(|k| x[k] * (axes[k] - axis).cos()).sum::<f64>()
                / std::f64::consts::SQRT_2
        };
        (proj(self.d_axis), proj(self.d_axis + 0.5 * PI))
    }
}

/// Linear material data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Materials {
    pub mu_r_iron: f64,
    pub mu_r_magnet: f64,
    /// Remanence (T), magnetized outward (`+y`).
    pub br: f64,
}

impl Default for Materials {
    fn default() -> Self {
        Self {
            mu_r_iron: 1000.0,
            mu_r_magnet: 1.05,
            br: 1.2,
        }
    }
}

impl Materials {
    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.mu_r_iron > 0.0 && self.mu_r_magnet > 0.0) {
            return Err(FemError::Geometry(
                "relative permeabilities must be positive".into(),
            ));
        }
        if !(self.br >= 0.0 && self.br.is_finite()) {
            return Err(FemError::Geometry("remanence must be non-negative".into()));
        }
        Ok(())
    }

    pub fn nu_air(&self) -> f64 {
        1.0 / MU0
    }

    pub fn nu_iron(&self) -> f64 {
        1.0 / (MU0 * self.mu_r_iron)
    }

    pub fn nu_magnet(&self) -> f64 {
        1.0 / (MU0 * self.mu_r_magnet)
    }

    /// Source field `nu_pm * Br` of the magnet (A/m).
    pub fn h_pm(&self) -> f64 {
        self.nu_magnet() * self.br
    }
}

/// Geometry of the single-pole template. Lengths in metres.
///
/// Three slots per pole sit at base cells `[1,3)`, `[5,7)` and `[9,11)` of a
/// twelve-cell pole pitch and carry phases `A+`, `C-`, `B+`. The PM block
/// sits inside a deformable box spanning cells `[2,10)` and radially from
/// `magnet_box_bottom` up to the rotor surface; the box sides next to the
/// magnet are air flux barriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleGeometry {
    pub npp: u32,
    pub r_shaft: f64,
    pub r_rotor: f64,
    pub r_stator_in: f64,
    pub r_stator_out: f64,
    pub slot_depth: f64,
    pub l_z: f64,
    /// Conductors per slot.
    pub turns_per_slot: f64,
    /// Radial position of the box bottom above the shaft.
    pub magnet_box_bottom: f64,
    /// Minimal distance kept between the magnet and the box edges (mm).
    pub min_gap_mm: f64,
}

impl Default for PoleGeometry {
    fn default() -> Self {
        Self {
            npp: 3,
            r_shaft: 0.012,
            r_rotor: 0.040,
            r_stator_in: 0.0405,
            r_stator_out: 0.065,
            slot_depth: 0.014,
            l_z: 0.05,
            turns_per_slot: 12.0,
            magnet_box_bottom: 0.004,
            min_gap_mm: 0.5,
        }
    }
}

pub(crate) const BASE_CELLS: usize = 12;
pub(crate) const BOX_CELLS: (usize, usize) = (2, 10);
pub(crate) const BOX_ROWS: usize = 8;
/// Slot cell ranges and their (phase, sign).
pub(crate) const SLOTS: [(usize, usize, Phase, f64); 3] = [
    (1, 3, Phase::A, 1.0),
    (5, 7, Phase::C, -1.0),
    (9, 11, Phase::B, 1.0),
];
/// Base rows per layer: below box, box, air gap, slots, yoke.
pub(crate) const LAYER_ROWS: [usize; 5] = [1, BOX_ROWS, 1, 4, 3];

impl PoleGeometry {
    pub fn validate(&self) -> Result<(), FemError> {
        let err = |m: &str| Err(FemError::Geometry(m.into()));
        if self.npp == 0 {
            return err("pole-pair count must be positive");
        }
        if !(0.0 < self.r_shaft
            && self.r_shaft < self.r_rotor
            && self.r_rotor < self.r_stator_in
            && self.r_stator_in < self.r_stator_out)
        {
            return err("radii must increase strictly from the shaft outward");
        }
        if !(self.slot_depth > 0.0 && self.slot_depth < self.r_stator_out - self.r_stator_in) {
            return err("slot depth must be positive and leave a stator yoke");
        }
        if !(self.l_z > 0.0 && self.turns_per_slot > 0.0) {
            return err("machine length and turns must be positive");
        }
        if !(self.magnet_box_bottom > 0.0 && self.magnet_box_bottom < self.rotor_thickness()) {
            return err("magnet box bottom must lie inside the rotor iron");
        }
        if !(self.min_gap_mm > 0.0) {
            return err("minimal magnet gap must be positive");
        }
        Ok(())
    }

    pub fn air_gap(&self) -> f64 {
        self.r_stator_in - self.r_rotor
    }

    pub fn rotor_thickness(&self) -> f64 {
        self.r_rotor - self.r_shaft
    }

    /// Pole pitch at the mean air-gap radius.
    pub fn pole_pitch(&self) -> f64 {
        PI * 0.5 * (self.r_rotor + self.r_stator_in) / f64::from(self.npp)
    }

    pub fn height(&self) -> f64 {
        self.r_stator_out - self.r_shaft
    }

    /// Width of the deformable box (mm).
    pub fn box_width_mm(&self) -> f64 {
        1e3 * self.pole_pitch() * (BOX_CELLS.1 - BOX_CELLS.0) as f64 / BASE_CELLS as f64
    }

    /// Height of the deformable box (mm).
    pub fn box_height_mm(&self) -> f64 {
        1e3 * (self.rotor_thickness() - self.magnet_box_bottom)
    }

    /// Checks that the PM block fits in the box with the minimal gap.
    pub fn check_pm(&self, p: &PmParams) -> Result<(), FemError> {
        let g = self.min_gap_mm;
        let ok = p.p1.is_finite()
            && p.p2.is_finite()
            && p.p3.is_finite()
            && p.p1 >= g
            && p.p2 >= g
            && p.p3 >= g
            && p.p1 + 2.0 * g <= self.box_width_mm()
            && p.p2 + p.p3 + g <= self.box_height_mm();
        if ok {
            Ok(())
        } else {
            Err(FemError::InadmissiblePm {
                p: p.to_array(),
                reason: format!(
                    "need p >= {g} mm, p1 <= {:.4} mm and p2 + p3 <= {:.4} mm",
                    self.box_width_mm() - 2.0 * g,
                    self.box_height_mm() - g
                ),
            })
        }
    }

    /// Corner positions (m) of the deformable box `O1..O4` followed by the
    /// magnet `I1..I4`, each counter-clockwise from the bottom left.
    pub fn box_vertices(&self, p: &PmParams) -> [[f64; 2]; 8] {
        let tau = self.pole_pitch();
        let xl = tau * BOX_CELLS.0 as f64 / BASE_CELLS as f64;
        let xr = tau * BOX_CELLS.1 as f64 / BASE_CELLS as f64;
        let y0 = self.magnet_box_bottom;
        let y1 = self.rotor_thickness();
        let xc = 0.5 * tau;
        let (hw, top) = (0.5e-3 * p.p1, y1 - 1e-3 * p.p3);
        let bot = top - 1e-3 * p.p2;
        [
            [xl, y0],
            [xr, y0],
            [xr, y1],
            [xl, y1],
            [xc - hw, bot],
            [xc + hw, bot],
            [xc + hw, top],
            [xc - hw, top],
        ]
    }

    pub fn winding(&self) -> Winding {
        let cell = PI / BASE_CELLS as f64;
        Winding {
            slots: SLOTS
                .iter()
                .map(|&(a, b, phase, sign)| SlotSpec {
                    phase,
                    sign,
                    angle: 0.5 * (a + b) as f64 * cell,
                })
                .collect(),
            turns: self.turns_per_slot,
            poles: 2.0 * f64::from(self.npp),
            d_axis: 0.5 * PI,
        }
    }
}
