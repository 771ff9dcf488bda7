//! Internal unit system.
//!
//! Everything inside the crate works in reduced units with `ħ = m = V0 = 1`.
//! Times are therefore already `t·V0/ħ` and energies `E/V0`; lengths are in
//! the same `k⁻¹` units the potential widths are quoted in. [`Units`] converts
//! between these and a caller's scale when a run is configured with a
//! non-unit `ħ`, `m` or `V0`.

use serde::{Deserialize, Serialize};

/// Reduced Planck constant in internal units.
pub const HBAR: f64 = 1.0;
/// Particle mass in internal units.
pub const MASS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Units {
    pub hbar: f64,
    pub mass: f64,
    pub v0: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
            v0: 1.0,
        }
    }
}

impl Units {
    /// Time expressed as `t·V0/ħ`.
    pub fn reduced_time(&self, t: f64) -> f64 {
        t * self.v0 / self.hbar
    }

    pub fn time_from_reduced(&self, tau: f64) -> f64 {
        tau * self.hbar / self.v0
    }

    pub fn reduced_energy(&self, e: f64) -> f64 {
        e / self.v0
    }

    pub fn energy_from_reduced(&self, e: f64) -> f64 {
        e * self.v0
    }

    /// Natural length `ħ / sqrt(m V0)`.
    pub fn length_scale(&self) -> f64 {
        self.hbar / (self.mass * self.v0).sqrt()
    }

    pub fn reduced_length(&self, x: f64) -> f64 {
        x / self.length_scale()
    }

    pub fn length_from_reduced(&self, x: f64) -> f64 {
        x * self.length_scale()
    }

    /// Frequency expressed as `ħω/V0`.
    pub fn reduced_frequency(&self, omega: f64) -> f64 {
        omega * self.hbar / self.v0
    }

    pub fn frequency_from_reduced(&self, w: f64) -> f64 {
        w * self.v0 / self.hbar
    }
}
