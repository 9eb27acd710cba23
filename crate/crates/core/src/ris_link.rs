//! RIS beam-broadening gain and the end-to-end link budget.
//!
//! A surface serving several test points widens its beam to cover their
//! spread in direction-cosine space. Each natural beamwidth covered divides
//! the full cascaded gain `(n_h n_v)^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Scene, Vec3};
use crate::propagation::{to_db, LinkModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisSpec {
    pub n_h: u32,
    pub n_v: u32,
    /// Inter-element spacing over wavelength.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.5
}

impl RisSpec {
    pub fn new(n_h: u32, n_v: u32, delta: f64) -> Result<Self> {
        let s = RisSpec { n_h, n_v, delta };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_h < 1 || self.n_v < 1 {
            return Err(Error::Invalid(format!("ris.n_h and ris.n_v must be >= 1, got {}x{}", self.n_h, self.n_v)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Invalid(format!("ris.delta must lie in (0, 1], got {}", self.delta)));
        }
        Ok(())
    }

    pub fn elements(&self) -> u64 {
        self.n_h as u64 * self.n_v as u64
    }

    /// Spans of a single natural beam.
    pub fn floor_spans(&self) -> BeamSpans {
        BeamSpans { delta_y: 2.0 * self.delta / self.n_h as f64, delta_z: 2.0 * self.delta / self.n_v as f64 }
    }
}

/// Mounting of a surface: where it is and which way it faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisPose {
    pub position: Vec3,
    pub boresight: Vec3,
    pub up: Vec3,
}

impl RisPose {
    /// Normalizes both axes and checks they are orthogonal.
    pub fn new(position: Vec3, boresight: Vec3, up: Vec3) -> Result<Self> {
        if boresight.norm() < 1e-12 || up.norm() < 1e-12 {
            return Err(Error::Invalid("RIS boresight and up must be non-zero".into()));
        }
        let pose = RisPose { position, boresight: boresight.normalized(), up: up.normalized() };
        if pose.boresight.dot(pose.up).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "RIS boresight {:?} is not perpendicular to up {:?}",
                pose.boresight, pose.up
            )));
        }
        Ok(pose)
    }

    /// In-plane horizontal axis.
    pub fn horizontal(&self) -> Vec3 {
        self.up.cross(self.boresight)
    }

    /// Direction cosines `(u, v)` of the unit vector towards `target` along
    /// the horizontal and vertical surface axes, or `None` if the target is not
    /// strictly in front of the surface.
    pub fn direction_cosines(&self, target: Vec3) -> Option<(f64, f64)> {
        let d = target - self.position;
        let n = d.norm();
        if n == 0.0 {
            return None;
        }
        let d = d / n;
        if d.dot(self.boresight) <= 0.0 {
            return None;
        }
        Some((d.dot(self.horizontal()), d.dot(self.up)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpans {
    pub delta_y: f64,
    pub delta_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub freq_hz: f64,
    pub n_bs_antennas: u32,
    #[serde(rename = "noise_dbm", default = "default_noise")]
    pub noise_power_dbm: f64,
    /// When false the BS array gain `N_b` is not applied.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub mrt_array_gain: bool,
}

fn default_noise() -> f64 {
    -85.0
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl RadioParams {
    /// Table II values with the default noise floor.
    pub fn default_26ghz() -> Self {
        RadioParams { tx_power_dbm: 28.0, freq_hz: 26e9, n_bs_antennas: 2, noise_power_dbm: -85.0, mrt_array_gain: true }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.freq_hz > 0.0) {
            return Err(Error::Invalid(format!("radio.freq_hz must be positive, got {}", self.freq_hz)));
        }
        if self.n_bs_antennas < 1 {
            return Err(Error::Invalid("radio.n_bs_antennas must be >= 1".into()));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_power_dbm.is_finite() {
            return Err(Error::Invalid("radio powers must be finite".into()));
        }
        Ok(())
    }

    /// Transmit power plus MRT array gain, in dBm.
    pub fn eirp_dbm(&self) -> f64 {
        if self.mrt_array_gain {
            self.tx_power_dbm + to_db(self.n_bs_antennas as f64)
        } else {
            self.tx_power_dbm
        }
    }
}

/// Spans of the beam needed to cover `targets` from `pose`, floored at one
/// natural beamwidth per axis.
pub fn beam_spans(pose: &RisPose, spec: &RisSpec, targets: &[Vec3]) -> Result<BeamSpans> {
    if targets.is_empty() {
        return Err(Error::domain("beam_spans needs at least one target"));
    }
    let mut u_lo = f64::INFINITY;
    let mut u_hi = f64::NEG_INFINITY;
    let mut v_lo = f64::INFINITY;
    let mut v_hi = f64::NEG_INFINITY;
    for t in targets {
        let (u, v) = pose
            .direction_cosines(*t)
            .ok_or_else(|| Error::domain(format!("target {t:?} is behind the surface at {:?}", pose.position)))?;
        u_lo = u_lo.min(u);
        u_hi = u_hi.max(u);
        v_lo = v_lo.min(v);
        v_hi = v_hi.max(v);
    }
    Ok(spans_from_ranges(spec, u_hi - u_lo, v_hi - v_lo))
}

pub(crate) fn spans_from_ranges(spec: &RisSpec, u_range: f64, v_range: f64) -> BeamSpans {
    let floor = spec.floor_spans();
    BeamSpans {
        delta_y: (spec.delta * u_range).max(floor.delta_y),
        delta_z: (spec.delta * v_range).max(floor.delta_z),
    }
}

/// Linear cascaded power gain of a broadened beam.
pub fn ris_gain(spec: &RisSpec, spans: &BeamSpans) -> f64 {
    let n_h = spec.n_h as f64;
    let n_v = spec.n_v as f64;
    let b_y = (spans.delta_y * n_h / (2.0 * spec.delta)).max(1.0);
    let b_z = (spans.delta_z * n_v / (2.0 * spec.delta)).max(1.0);
    (n_h * n_v).powi(2) / (b_y * b_z)
}

/// Received power through one RIS given the two hop gains (linear).
/// Either hop at zero gives `-inf`.
pub fn cascaded_power_from_gains(radio: &RadioParams, bs_to_ris: f64, ris_gain: f64, ris_to_tp: f64) -> f64 {
    if bs_to_ris <= 0.0 || ris_to_tp <= 0.0 {
        return f64::NEG_INFINITY;
    }
    radio.eirp_dbm() + to_db(bs_to_ris) + to_db(ris_gain) + to_db(ris_to_tp)
}

pub fn direct_power_from_gain(radio: &RadioParams, gain: f64) -> f64 {
    if gain <= 0.0 {
        return f64::NEG_INFINITY;
    }
    radio.eirp_dbm() + to_db(gain)
}

#[allow(clippy::too_many_arguments)]
pub fn cascaded_rx_power(
    scene: &Scene,
    model: &LinkModel,
    bs: Vec3,
    pose: &RisPose,
    spec: &RisSpec,
    tp: Vec3,
    spans: &BeamSpans,
    radio: &RadioParams,
) -> f64 {
    let g1 = model.power_gain(scene, bs, pose.position);
    let g2 = model.power_gain(scene, pose.position, tp);
    cascaded_power_from_gains(radio, g1, ris_gain(spec, spans), g2)
}

pub fn direct_rx_power(scene: &Scene, model: &LinkModel, bs: Vec3, tp: Vec3, radio: &RadioParams) -> f64 {
    direct_power_from_gain(radio, model.power_gain(scene, bs, tp))
}

/// Cascade through a unit-gain scatterer at `ris_position`.
pub fn isotropic_scatter_power(
    scene: &Scene,
    model: &LinkModel,
    bs: Vec3,
    ris_position: Vec3,
    probe: Vec3,
    radio: &RadioParams,
) -> f64 {
    let g1 = model.power_gain(scene, bs, ris_position);
    let g2 = model.power_gain(scene, ris_position, probe);
    cascaded_power_from_gains(radio, g1, 1.0, g2)
}
