//! The parsed experiment description and its resolution into physical
//! objects.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::dynamics::{NoiseModel, PulseSequence, DEFAULT_OMEGA_HIGH, DEFAULT_OMEGA_LOW};
use crate::endor::{BroadeningModel, BroadeningShape};
use crate::error::{Error, Result};
use crate::spin::{build_hamiltonian, larmor_from_b0, NuclearHamiltonian, Projection, Spin, SpinSystem};
use crate::strain::{
    coupling_fq, efg_from_strain, stack_strain, uniaxial_strain, EfgTensor, ForecastGeometry,
    GradientElasticTensor, QuadrupoleCoupling, ShearConvention, Stack111Mode, StackOrientation, StiffnessConstants,
    StrainTensor,
};

/// Source positions of keys (`section.key`), kept for diagnostics and
/// ignored by equality.
#[derive(Debug, Clone, Default)]
pub struct SourceMap(pub BTreeMap<String, (usize, usize)>);

impl PartialEq for SourceMap {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl SourceMap {
    pub fn position(&self, key: &str) -> Option<(usize, usize)> {
        self.0.get(key).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSection {
    pub spin: Spin,
    pub g_n: f64,
    pub g_n_free: f64,
    /// m²
    pub q: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let s = SpinSystem::arsenic75();
        SystemSection {
            spin: s.spin,
            g_n: s.g_n,
            g_n_free: s.g_n_free,
            q: s.q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSection {
    /// T
    pub b0: f64,
    /// Field direction in crystal axes.
    pub orientation: [f64; 3],
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            b0: 0.35,
            orientation: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StrainMode {
    #[default]
    None,
    Stack100,
    Stack111,
    Uniaxial,
    Tensor,
}

impl StrainMode {
    pub const NAMES: [(&'static str, StrainMode); 5] = [
        ("none", StrainMode::None),
        ("stack-100", StrainMode::Stack100),
        ("stack-111", StrainMode::Stack111),
        ("uniaxial", StrainMode::Uniaxial),
        ("tensor", StrainMode::Tensor),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|n| n.1 == self).expect("listed").0
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::NAMES.iter().find(|n| n.0 == s).map(|n| n.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrainSection {
    pub mode: StrainMode,
    pub eps_par: Option<f64>,
    pub eps_perp: Option<f64>,
    pub stack111: Stack111Mode,
    pub eps_long: Option<f64>,
    pub eps_trans: Option<f64>,
    pub axis: Option<[f64; 3]>,
    /// `[xx, yy, zz, yz, xz, xy]`, tensor shear components.
    pub components: Option<[f64; 6]>,
    pub stiffness: StiffnessConstants,
}

impl Default for StrainSection {
    fn default() -> Self {
        StrainSection {
            mode: StrainMode::None,
            eps_par: None,
            eps_perp: None,
            stack111: Stack111Mode::default(),
            eps_long: None,
            eps_trans: None,
            axis: None,
            components: None,
            stiffness: StiffnessConstants::silicon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub variable: String,
    /// SI in the variable's dimension.
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// Dimension the bounds were written in.
    pub dimension: super::units::Dimension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSection {
    pub alpha: f64,
    /// Calibration target at `n = 1`, s. Ignored when `amplitude` is set.
    pub t2: Option<f64>,
    pub amplitude: Option<f64>,
    /// Hz
    pub f_low: f64,
    /// Hz
    pub f_high: f64,
    pub pulses: Vec<u32>,
    pub points: usize,
    pub transition: String,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            alpha: 1.0,
            t2: None,
            amplitude: None,
            f_low: DEFAULT_OMEGA_LOW / (2.0 * PI),
            f_high: DEFAULT_OMEGA_HIGH / (2.0 * PI),
            pulses: vec![1, 2, 4, 8, 16, 32],
            points: 40,
            transition: "inner".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndorSection {
    /// Hz; `None` centres the sweep on the Larmor frequency.
    pub rf_start: Option<f64>,
    pub rf_stop: Option<f64>,
    /// s
    pub rf_duration: f64,
    pub points: usize,
    pub efficiency: f64,
}

impl Default for EndorSection {
    fn default() -> Self {
        EndorSection {
            rf_start: None,
            rf_stop: None,
            rf_duration: 400e-6,
            points: 500,
            efficiency: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub format: OutputFormat,
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            format: OutputFormat::Csv,
            prefix: "quadspin".into(),
        }
    }
}

/// A complete `.qsx` experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub field: FieldSection,
    pub strain: StrainSection,
    pub tensor_s: GradientElasticTensor,
    pub sequences: Vec<PulseSequence>,
    pub sweep: Option<SweepSection>,
    pub broadening: BroadeningModel,
    pub noise: Option<NoiseSection>,
    pub endor: EndorSection,
    pub output: OutputSection,
    pub source: SourceMap,
}

/// Broadening shape names in `.qsx`.
pub const BROADENING_SHAPES: [(&str, BroadeningShape); 2] = [
    ("gaussian", BroadeningShape::Gaussian),
    ("one-sided-exponential", BroadeningShape::OneSidedExponential),
];

pub const STACK111_MODES: [(&str, Stack111Mode); 2] =
    [("elastic", Stack111Mode::Elastic), ("same-as-100", Stack111Mode::SameAs100)];

pub const SHEAR_CONVENTIONS: [(&str, ShearConvention); 2] =
    [("tensor", ShearConvention::Tensor), ("engineering", ShearConvention::Engineering)];

pub const SWEEP_VARIABLES: [&str; 3] = ["theta", "strain", "B0"];

impl ExperimentConfig {
    pub fn spin_system(&self) -> SpinSystem {
        SpinSystem {
            spin: self.system.spin,
            g_n: self.system.g_n,
            q: self.system.q,
            g_n_free: self.system.g_n_free,
        }
    }

    pub fn larmor(&self, k: &PhysicalConstants) -> f64 {
        larmor_from_b0(self.system.g_n, self.field.b0, k)
    }

    pub fn field_axis(&self) -> Result<Vector3<f64>> {
        let v = Vector3::from(self.field.orientation);
        let n = v.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidInput("field orientation must be non-zero".into()));
        }
        Ok(v / n)
    }

    pub fn strain_tensor(&self) -> Result<StrainTensor> {
        let s = &self.strain;
        let missing = |what: &str| Error::InvalidInput(format!("strain mode {} needs `{what}`", s.mode.name()));
        match s.mode {
            StrainMode::None => Ok(StrainTensor::zero()),
            StrainMode::Stack100 | StrainMode::Stack111 => {
                let orientation = if s.mode == StrainMode::Stack100 {
                    StackOrientation::Stack100
                } else {
                    StackOrientation::Stack111
                };
                let eps_par = s.eps_par.ok_or_else(|| missing("eps_par"))?;
                match s.eps_perp {
                    Some(eps_perp) => StrainTensor::stack(eps_par, eps_perp, &orientation.normal()),
                    None => stack_strain(eps_par, orientation, s.stack111, &s.stiffness),
                }
            }
            StrainMode::Uniaxial => {
                let axis = Vector3::from(s.axis.unwrap_or([1.0, 1.0, 1.0]));
                uniaxial_strain(s.eps_long.ok_or_else(|| missing("eps_long"))?, s.eps_trans.unwrap_or(0.0), &axis)
            }
            StrainMode::Tensor => {
                let c = s.components.ok_or_else(|| missing("components"))?;
                StrainTensor::new(Matrix3::new(c[0], c[5], c[4], c[5], c[1], c[3], c[4], c[3], c[2]))
            }
        }
    }

    /// EFG in crystal axes.
    pub fn efg(&self) -> Result<EfgTensor> {
        Ok(efg_from_strain(&self.strain_tensor()?, &self.tensor_s))
    }

    pub fn coupling(&self, k: &PhysicalConstants) -> Result<QuadrupoleCoupling> {
        coupling_fq(&self.efg()?, &self.spin_system(), k)
    }

    /// Angle between the principal EFG axis and the field, rad.
    pub fn theta(&self, k: &PhysicalConstants) -> Result<f64> {
        let c = self.coupling(k)?;
        if c.f_q == 0.0 {
            return Ok(0.0);
        }
        let cos = c.axis.dot(&self.field_axis()?).abs().min(1.0);
        Ok(cos.acos())
    }

    /// Full Hamiltonian with the EFG rotated into the field frame.
    pub fn hamiltonian(&self, k: &PhysicalConstants) -> Result<NuclearHamiltonian> {
        let axis = self.field_axis()?;
        let efg = self.efg()?.in_field_frame(&axis);
        build_hamiltonian(&self.spin_system(), self.larmor(k), &efg, k)
    }

    /// Geometry used to forecast shifts for a scalar strain amplitude.
    pub fn forecast_geometry(&self) -> ForecastGeometry {
        match self.strain.mode {
            StrainMode::Stack100 => ForecastGeometry::Stack {
                orientation: StackOrientation::Stack100,
                mode: self.strain.stack111,
                stiffness: self.strain.stiffness,
            },
            StrainMode::Uniaxial => ForecastGeometry::Uniaxial {
                axis: Vector3::from(self.strain.axis.unwrap_or([1.0, 1.0, 1.0])),
                transverse_ratio: match (self.strain.eps_long, self.strain.eps_trans) {
                    (Some(l), Some(t)) if l != 0.0 => t / l,
                    _ => 0.0,
                },
            },
            _ => ForecastGeometry::Stack {
                orientation: StackOrientation::Stack111,
                mode: self.strain.stack111,
                stiffness: self.strain.stiffness,
            },
        }
    }

    pub fn noise_model(&self) -> Result<Option<NoiseModel>> {
        let Some(n) = &self.noise else { return Ok(None) };
        let base = NoiseModel::new(n.alpha, n.amplitude.unwrap_or(1.0), 2.0 * PI * n.f_low, 2.0 * PI * n.f_high)?;
        match (n.amplitude, n.t2) {
            (Some(_), _) => Ok(Some(base)),
            (None, Some(t2)) => base.calibrated(1, t2).map(Some),
            (None, None) => Err(Error::InvalidNoise("[noise] needs `t2` or `amplitude`".into())),
        }
    }

    /// Ionization targets for the four-spectrum batch.
    pub fn targets(&self) -> Vec<Projection> {
        self.system.spin.projections().collect()
    }
}
