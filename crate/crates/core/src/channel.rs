//! Line-of-sight optical channel between ceiling-mounted VCSELs and users
//! carrying reconfigurable multi-photodiode detectors.
//!
//! Each VCSEL emits a fundamental-mode Gaussian beam. The fraction of the
//! transmitted power that a photodiode of area `A_m` collects is the
//! encircled power of the beam at the photodiode's distance, weighted by the
//! cosine of the incidence angle against the photodiode's orientation and
//! cut off outside the field of view. A detector with `M` distinct
//! orientations ("preset modes") turns this into an `L x L` channel matrix
//! per user: row `m` holds the gains of all `L` access points seen through
//! preset mode `m`.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = Vector3<f64>;

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Relative singular-value threshold below which a channel matrix is
/// treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Transmitter and photodetector constants, in SI units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VcselParams {
    pub wavelength: f64,
    pub beam_waist: f64,
    pub tx_power: f64,
    pub bandwidth: f64,
    /// Relative intensity noise in dB/Hz; negative.
    pub rin_db_hz: f64,
    pub responsivity: f64,
}

impl VcselParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("beam waist", self.beam_waist),
            ("tx power", self.tx_power),
            ("bandwidth", self.bandwidth),
            ("responsivity", self.responsivity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rin_db_hz.is_finite() && self.rin_db_hz < 0.0) {
            return Err(invalid(format!(
                "RIN must be a negative dB/Hz value, got {}",
                self.rin_db_hz
            )));
        }
        Ok(())
    }
}

/// How the on-axis collected power is computed from the photodiode area.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApertureModel {
    /// Encircled power inside a disk of radius `sqrt(A_m / pi)`.
    #[default]
    Encircled,
    /// `P_t [1 - exp(-2 (A_m / (2 pi W_d))^2)]`, evaluated as written.
    /// Dimensionally inconsistent; kept for comparison runs.
    Literal,
}

/// How a link whose user is not directly below the VCSEL is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffAxisModel {
    /// The on-axis collected power evaluated at the slant range between
    /// the VCSEL and the photodiode.
    #[default]
    SlantRange,
    /// The Gaussian intensity at the user's radial offset from the beam
    /// axis, at the vertical distance below the VCSEL.
    GaussianFalloff,
}

/// The `[channel]` configuration section. Fields are in the units named by
/// their suffix; use the accessors for SI values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub wavelength_nm: f64,
    pub beam_waist_um: f64,
    pub tx_power_mw: f64,
    pub bandwidth_ghz: f64,
    pub rin_db_hz: f64,
    pub responsivity_a_w: f64,
    /// Total detector area, split evenly over the photodiodes.
    pub detector_area_mm2: f64,
    pub photodiodes: usize,
    pub fov_deg: f64,
    pub mode_tilt_deg: f64,
    pub load_ohms: f64,
    pub temperature_k: f64,
    /// Select [`ApertureModel::Literal`] instead of the encircled-power default.
    pub literal_aperture: bool,
    pub off_axis: OffAxisModel,
    /// Optical power per BIA stream. The electrical stream power entering
    /// the rate expressions is `(responsivity * stream_power)^2`.
    pub stream_power_mw: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: 830.0,
            beam_waist_um: 20.0,
            tx_power_mw: 10.0,
            bandwidth_ghz: 5.0,
            rin_db_hz: -155.0,
            responsivity_a_w: 0.53,
            detector_area_mm2: 15.0,
            photodiodes: 16,
            fov_deg: 45.0,
            mode_tilt_deg: 25.0,
            load_ohms: 50.0,
            temperature_k: 300.0,
            literal_aperture: false,
            off_axis: OffAxisModel::SlantRange,
            // Puts the median best-link SNR of a covered user near 20 dB in
            // the 5 m x 5 m x 3 m room with a 4 x 4 grid at 20 um waist.
            stream_power_mw: 36.0,
        }
    }
}

impl ChannelConfig {
    pub fn vcsel(&self) -> VcselParams {
        VcselParams {
            wavelength: self.wavelength_nm * 1e-9,
            beam_waist: self.beam_waist_um * 1e-6,
            tx_power: self.tx_power_mw * 1e-3,
            bandwidth: self.bandwidth_ghz * 1e9,
            rin_db_hz: self.rin_db_hz,
            responsivity: self.responsivity_a_w,
        }
    }

    pub fn with_beam_waist_um(&self, beam_waist_um: f64) -> Self {
        Self {
            beam_waist_um,
            ..self.clone()
        }
    }

    pub fn detector_area(&self) -> f64 {
        self.detector_area_mm2 * 1e-6
    }

    /// Area of one photodiode, `A_rec / M`.
    pub fn photodiode_area(&self) -> f64 {
        self.detector_area() / self.photodiodes as f64
    }

    pub fn aperture(&self) -> ApertureModel {
        if self.literal_aperture {
            ApertureModel::Literal
        } else {
            ApertureModel::Encircled
        }
    }

    pub fn link_model(&self) -> LinkModel {
        LinkModel {
            photodiode_area: self.photodiode_area(),
            aperture: self.aperture(),
            off_axis: self.off_axis,
        }
    }

    /// Electrical power per stream in A^2.
    pub fn stream_power(&self) -> f64 {
        let current = self.responsivity_a_w * self.stream_power_mw * 1e-3;
        current * current
    }

    pub fn validate(&self) -> Result<()> {
        self.vcsel().validate()?;
        let checks = [
            ("detector_area_mm2", self.detector_area_mm2),
            ("load_ohms", self.load_ohms),
            ("temperature_k", self.temperature_k),
            ("stream_power_mw", self.stream_power_mw),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.photodiodes == 0 {
            return Err(Error::Config("photodiodes must be at least 1".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 90.0) {
            return Err(Error::Config(format!(
                "fov_deg must be in (0, 90], got {}",
                self.fov_deg
            )));
        }
        if !(0.0..90.0).contains(&self.mode_tilt_deg) {
            return Err(Error::Config(format!(
                "mode_tilt_deg must be in [0, 90), got {}",
                self.mode_tilt_deg
            )));
        }
        Ok(())
    }
}

/// Per-link evaluation settings shared by every photodiode of a detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub photodiode_area: f64,
    pub aperture: ApertureModel,
    pub off_axis: OffAxisModel,
}

pub fn rayleigh_range(beam_waist: f64, wavelength: f64) -> f64 {
    std::f64::consts::PI * beam_waist * beam_waist / wavelength
}

/// Gaussian beam radius `W0 sqrt(1 + (d / z_R)^2)` at distance `d`.
pub fn beam_radius(beam_waist: f64, wavelength: f64, distance: f64) -> Result<f64> {
    if !(beam_waist.is_finite() && beam_waist > 0.0) {
        return Err(invalid(format!(
            "beam waist must be positive, got {beam_waist}"
        )));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(invalid(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(invalid(format!(
            "distance must be non-negative, got {distance}"
        )));
    }
    Ok(beam_radius_unchecked(beam_waist, wavelength, distance))
}

fn beam_radius_unchecked(beam_waist: f64, wavelength: f64, distance: f64) -> f64 {
    let ratio = distance / rayleigh_range(beam_waist, wavelength);
    beam_waist * ratio.hypot(1.0)
}

/// Power collected by a photodiode of area `a_m` centred on the beam axis.
pub fn axial_received_power(
    tx_power: f64,
    beam_radius: f64,
    a_m: f64,
    model: ApertureModel,
) -> Result<f64> {
    for (name, v) in [
        ("tx power", tx_power),
        ("beam radius", beam_radius),
        ("area", a_m),
    ] {
        if v.is_nan() || v <= 0.0 {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(tx_power * axial_fraction(beam_radius, a_m, model))
}

fn axial_fraction(beam_radius: f64, a_m: f64, model: ApertureModel) -> f64 {
    let exponent = match model {
        // a^2 = A / pi
        ApertureModel::Encircled => -2.0 * a_m / (std::f64::consts::PI * beam_radius * beam_radius),
        ApertureModel::Literal => {
            let x = a_m / (2.0 * std::f64::consts::PI * beam_radius);
            -2.0 * x * x
        }
    };
    -exponent.exp_m1()
}

/// Fundamental-mode intensity `2 P / (pi W^2) exp(-2 r^2 / W^2)` in W/m^2.
pub fn gaussian_intensity(tx_power: f64, beam_radius: f64, radial: f64) -> f64 {
    let w2 = beam_radius * beam_radius;
    2.0 * tx_power / (std::f64::consts::PI * w2) * (-2.0 * radial * radial / w2).exp()
}

/// Dimensionless LoS gain (collected power over transmitted power) from a
/// ceiling VCSEL at `ap` to a photodiode at `user` facing `orientation`.
///
/// Incidence beyond `fov_deg` or from behind the photodiode yields 0.
pub fn los_gain(
    ap: &Point,
    user: &Point,
    orientation: &Vector3<f64>,
    fov_deg: f64,
    vcsel: &VcselParams,
    link: &LinkModel,
) -> f64 {
    let to_ap = ap - user;
    let range = to_ap.norm();
    if range == 0.0 {
        return 0.0;
    }
    let cos_inc = orientation.dot(&to_ap) / range;
    if cos_inc <= 0.0 || cos_inc < fov_deg.to_radians().cos() {
        return 0.0;
    }
    let footprint = match link.off_axis {
        OffAxisModel::SlantRange => {
            let w = beam_radius_unchecked(vcsel.beam_waist, vcsel.wavelength, range);
            axial_fraction(w, link.photodiode_area, link.aperture)
        }
        OffAxisModel::GaussianFalloff => {
            let vertical = to_ap.z.max(0.0);
            let radial = to_ap.xy().norm();
            let w = beam_radius_unchecked(vcsel.beam_waist, vcsel.wavelength, vertical);
            axial_fraction(w, link.photodiode_area, link.aperture)
                * (-2.0 * radial * radial / (w * w)).exp()
        }
    };
    footprint * cos_inc
}

/// Photodiode orientations for an `m`-element detector: `m` (or `m - 1`
/// when `m` is odd) unit vectors at polar tilt `tilt_deg` with equally
/// spaced azimuths, plus one vertical vector last when `m` is odd.
pub fn preset_orientations(m: usize, tilt_deg: f64) -> Vec<Vector3<f64>> {
    let tilted = if m % 2 == 1 { m - 1 } else { m };
    let (sin_t, cos_t) = tilt_deg.to_radians().sin_cos();
    let mut out: Vec<Vector3<f64>> = (0..tilted)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / tilted as f64;
            Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
        })
        .collect();
    if m % 2 == 1 {
        out.push(Vector3::z());
    }
    out
}

/// Room, access points, users and detector geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTopology {
    pub room_dims: [f64; 3],
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    /// Vertical distance from the ceiling to the receiving plane.
    pub plane_gap: f64,
    pub detector_area: f64,
    pub photodiodes: usize,
    pub orientations: Vec<Vector3<f64>>,
    pub fov_deg: f64,
}

impl NetworkTopology {
    /// Detector geometry is taken from `cfg`.
    pub fn new(
        room_dims: [f64; 3],
        ap_positions: Vec<Point>,
        user_positions: Vec<Point>,
        plane_gap: f64,
        cfg: &ChannelConfig,
    ) -> Result<Self> {
        let topo = Self {
            room_dims,
            ap_positions,
            user_positions,
            plane_gap,
            detector_area: cfg.detector_area(),
            photodiodes: cfg.photodiodes,
            orientations: preset_orientations(cfg.photodiodes, cfg.mode_tilt_deg),
            fov_deg: cfg.fov_deg,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(invalid("room dimensions must be positive"));
        }
        if !(self.plane_gap > 0.0 && self.plane_gap <= self.room_dims[2]) {
            return Err(invalid(format!(
                "plane gap must be in (0, room height], got {}",
                self.plane_gap
            )));
        }
        if self.ap_positions.is_empty() || self.user_positions.is_empty() {
            return Err(invalid("need at least one AP and one user"));
        }
        if self.photodiodes == 0 || self.orientations.len() != self.photodiodes {
            return Err(invalid("detector needs one orientation per photodiode"));
        }
        let eps = 1e-9;
        let inside = |p: &Point| (0..3).all(|i| p[i] >= -eps && p[i] <= self.room_dims[i] + eps);
        if let Some(p) = self
            .ap_positions
            .iter()
            .chain(&self.user_positions)
            .find(|p| !inside(p))
        {
            return Err(invalid(format!("position {p:?} lies outside the room")));
        }
        if let Some(n) = self
            .orientations
            .iter()
            .find(|n| (n.norm() - 1.0).abs() > 1e-9)
        {
            return Err(invalid(format!("orientation {n:?} is not a unit vector")));
        }
        Ok(())
    }

    /// `nx x ny` access points at the centres of a uniform ceiling grid.
    pub fn ceiling_grid(room_dims: [f64; 3], nx: usize, ny: usize) -> Vec<Point> {
        let (dx, dy) = (room_dims[0] / nx as f64, room_dims[1] / ny as f64);
        (0..nx)
            .flat_map(|i| {
                (0..ny).map(move |j| {
                    Point::new((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy, room_dims[2])
                })
            })
            .collect()
    }

    pub fn receiving_plane_height(&self) -> f64 {
        self.room_dims[2] - self.plane_gap
    }

    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }
}

/// Per-user `L x L` channel matrix (row = preset mode, column = AP) and the
/// post-detection noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub user: usize,
    pub gains: DMatrix<f64>,
    /// Noise variance in A^2.
    pub noise_var: f64,
}

impl ChannelMatrix {
    pub fn from_gains(user: usize, gains: DMatrix<f64>, noise_var: f64) -> Result<Self> {
        if !gains.is_square() || gains.nrows() == 0 {
            return Err(invalid(format!(
                "channel matrix must be square and non-empty, got {}x{}",
                gains.nrows(),
                gains.ncols()
            )));
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(invalid("channel gains must be finite and non-negative"));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(invalid(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(Self {
            user,
            gains,
            noise_var,
        })
    }

    pub fn dim(&self) -> usize {
        self.gains.nrows()
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.gains)
    }

    /// Largest gain of each AP over all preset modes.
    pub fn best_mode_gains(&self) -> Vec<f64> {
        self.gains
            .column_iter()
            .map(|c| c.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Best-link SNR `P_str max(H)^2 / sigma^2`.
    pub fn peak_snr(&self, stream_power: f64) -> f64 {
        let g = self.gains.max();
        stream_power * g * g / self.noise_var
    }
}

/// Rank from singular values above `RANK_TOLERANCE * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * top).count()
}

/// Shot + thermal + RIN noise variance (A^2) at received optical power
/// `received_power`.
pub fn noise_variance(
    received_power: f64,
    vcsel: &VcselParams,
    temperature: f64,
    load_ohms: f64,
) -> f64 {
    let b = vcsel.bandwidth;
    let current = vcsel.responsivity * received_power;
    let shot = 2.0 * ELEMENTARY_CHARGE * current * b;
    let thermal = 4.0 * BOLTZMANN * temperature / load_ohms * b;
    let rin = 10f64.powf(vcsel.rin_db_hz / 10.0) * current * current * b;
    shot + thermal + rin
}

/// The channel matrix of `user`, built from the first `L` preset modes.
///
/// The received power that sets the shot and RIN terms is the total power
/// incident on the strongest preset mode with every AP transmitting.
pub fn build_channel_matrix(
    topology: &NetworkTopology,
    cfg: &ChannelConfig,
    user: usize,
) -> Result<ChannelMatrix> {
    let user_pos = topology.user_positions.get(user).ok_or(Error::Index {
        index: user,
        len: topology.num_users(),
    })?;
    let l = topology.num_aps();
    if topology.photodiodes < l {
        return Err(Error::UnsupportedConfiguration(format!(
            "detector provides {} preset modes but {l} are needed",
            topology.photodiodes
        )));
    }
    let vcsel = cfg.vcsel();
    vcsel.validate()?;
    let link = LinkModel {
        photodiode_area: topology.detector_area / topology.photodiodes as f64,
        aperture: cfg.aperture(),
        off_axis: cfg.off_axis,
    };
    let gains = DMatrix::from_fn(l, l, |m, a| {
        los_gain(
            &topology.ap_positions[a],
            user_pos,
            &topology.orientations[m],
            topology.fov_deg,
            &vcsel,
            &link,
        )
    });
    let rank = numerical_rank(&gains);
    if rank < l {
        return Err(Error::DegenerateGeometry {
            user,
            rank,
            expected: l,
        });
    }
    let strongest_mode = gains.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let noise_var = noise_variance(
        vcsel.tx_power * strongest_mode,
        &vcsel,
        cfg.temperature_k,
        cfg.load_ohms,
    );
    ChannelMatrix::from_gains(user, gains, noise_var)
}
