//! Physical constants (SI, CODATA 2018 exact values where defined).

use serde::{Deserialize, Serialize};

/// Constants entering the Larmor frequency and the quadrupole coupling.
///
/// The defaults are fixed; the fields are public so tests can perturb them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Planck constant, J·s.
    pub h: f64,
    /// Nuclear magneton, J/T.
    pub mu_n: f64,
    /// Elementary charge, C.
    pub e: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        h: 6.626_070_15e-34,
        mu_n: 5.050_783_7e-27,
        e: 1.602_176_634e-19,
    };

    /// Frequency per unit EFG for quadrupole moment `q` (m²): `e·q/h` in Hz per V/m².
    pub fn quadrupole_hz_per_efg(&self, q: f64) -> f64 {
        self.e * q / self.h
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

/// Electron g-factor of the neutral arsenic donor.
pub const G_E_ARSENIC: f64 = 1.998_37;
/// Bohr magneton over Planck constant, Hz/T.
pub const MU_B_OVER_H: f64 = 13.996_244_93e9;
/// Isotropic hyperfine constant of As⁰ in silicon, Hz.
pub const HYPERFINE_ARSENIC: f64 = 198.35e6;
