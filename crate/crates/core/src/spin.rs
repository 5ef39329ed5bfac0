//! Nuclear spin operators, the Zeeman + quadrupole Hamiltonian and its
//! transitions.
//!
//! Energies are stored in Hz (energy divided by `h`). The basis is the `I_z`
//! eigenbasis ordered `m = I, I−1, …, −I`.
//!
//! # Quadrupole normalization
//!
//! For an axially symmetric EFG with principal value `V_n` along the unit
//! vector `n`, the quadrupole term is
//!
//! ```text
//! H_Q/h = f_Q / (4I(2I−1)) · (3 I_n² − I(I+1)),     f_Q = e·q·V_n / h
//! ```
//!
//! For a general traceless EFG this is `e·q/(2I(2I−1)h) · Σ_ij V_ij I_i I_j`.
//! With this convention a satellite `m ↔ m−1` sits at
//! `f0 − 3f_Q(2m−1)/(4I(2I−1)) · P2(cos θ)` to first order, i.e.
//! `f0 ∓ f_Q/2` at θ = 0 for the two outer lines of a spin 3/2.

use std::fmt;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::strain::EfgTensor;

/// Minimum squared overlap with an `I_z` eigenstate for an eigenvector to be
/// labeled by its dominant `m`.
pub const LABEL_OVERLAP_THRESHOLD: f64 = 0.6;

/// `f_Q/f0` above which the perturbative shift formulas are unreliable.
pub const PERTURBATIVE_LIMIT: f64 = 0.3;

/// A spin quantum number, stored as `2I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    pub const HALF: Spin = Spin { twice: 1 };
    pub const THREE_HALVES: Spin = Spin { twice: 3 };

    pub fn from_doubled(twice: u32) -> Result<Self> {
        if twice == 0 {
            return Err(Error::InvalidSpin(0.0));
        }
        Ok(Spin { twice })
    }

    /// Accepts integer and half-integer values only.
    pub fn new(value: f64) -> Result<Self> {
        let twice = 2.0 * value;
        if !value.is_finite() || value <= 0.0 || (twice - twice.round()).abs() > 1e-9 {
            return Err(Error::InvalidSpin(value));
        }
        Self::from_doubled(twice.round() as u32)
    }

    pub fn doubled(self) -> u32 {
        self.twice
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    /// Hilbert-space dimension `2I+1`.
    pub fn dim(self) -> usize {
        self.twice as usize + 1
    }

    /// `I(I+1)`.
    pub fn casimir(self) -> f64 {
        let i = self.value();
        i * (i + 1.0)
    }

    /// Projections in basis order `I, I−1, …, −I`.
    pub fn projections(self) -> impl Iterator<Item = Projection> {
        let t = self.twice as i32;
        (0..=t).map(move |k| Projection(t - 2 * k))
    }

    /// Basis index of projection `m`, if it belongs to this spin.
    pub fn index_of(self, m: Projection) -> Option<usize> {
        let t = self.twice as i32;
        if m.0.abs() > t || (t - m.0) % 2 != 0 {
            return None;
        }
        Some(((t - m.0) / 2) as usize)
    }

    pub fn has_quadrupole(self) -> bool {
        self.twice >= 2
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_half(self.twice as i32, f)
    }
}

/// A magnetic quantum number `m`, stored as `2m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Projection(pub i32);

impl Projection {
    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// The level one quantum below (`m − 1`).
    pub fn lower(self) -> Projection {
        Projection(self.0 - 2)
    }

    pub fn from_value(m: f64) -> Option<Projection> {
        let t = 2.0 * m;
        ((t - t.round()).abs() < 1e-9).then(|| Projection(t.round() as i32))
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_half(self.0, f)
    }
}

fn fmt_half(twice: i32, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if twice % 2 == 0 {
        write!(f, "{}", twice / 2)
    } else {
        write!(f, "{}/2", twice)
    }
}

/// Nuclear species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub spin: Spin,
    /// Nuclear g-factor.
    pub g_n: f64,
    /// Quadrupole moment, m².
    pub q: f64,
    /// Free-nucleus reference g-factor used for the chemical shift.
    pub g_n_free: f64,
}

impl SpinSystem {
    /// ⁷⁵As with the g-factor measured for As⁺ in silicon.
    pub fn arsenic75() -> Self {
        SpinSystem {
            spin: Spin::THREE_HALVES,
            g_n: 0.9558,
            q: 3.14e-29,
            g_n_free: 0.95965,
        }
    }

    /// Fractional deviation `g_n/g_n_free − 1`.
    pub fn chemical_shift(&self) -> f64 {
        chemical_shift(self.g_n, self.g_n_free)
    }
}

pub fn chemical_shift(g_n: f64, g_n_free: f64) -> f64 {
    g_n / g_n_free - 1.0
}

/// Static field; `axis` defines the laboratory z direction in the crystal frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub b0: f64,
    pub axis: Vector3<f64>,
}

impl FieldConfig {
    pub fn new(b0: f64, axis: Vector3<f64>) -> Result<Self> {
        if !(b0 >= 0.0) {
            return Err(Error::NegativeField(b0));
        }
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitAxis(norm));
        }
        Ok(FieldConfig { b0, axis })
    }

    /// Field along crystal `[001]`.
    pub fn along_z(b0: f64) -> Result<Self> {
        Self::new(b0, Vector3::z())
    }
}

/// `I_x`, `I_y`, `I_z` in the `|I, m⟩` basis.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub x: DMatrix<Complex64>,
    pub y: DMatrix<Complex64>,
    pub z: DMatrix<Complex64>,
}

impl SpinOperators {
    /// `n·I` for a (not necessarily unit) vector `n`.
    pub fn along(&self, n: &Vector3<f64>) -> DMatrix<Complex64> {
        &self.x * Complex64::from(n.x) + &self.y * Complex64::from(n.y) + &self.z * Complex64::from(n.z)
    }

    pub fn components(&self) -> [&DMatrix<Complex64>; 3] {
        [&self.x, &self.y, &self.z]
    }
}

pub fn spin_operators(spin: Spin) -> SpinOperators {
    let d = spin.dim();
    let casimir = spin.casimir();
    let ms: Vec<f64> = spin.projections().map(Projection::value).collect();

    let mut raise = DMatrix::<Complex64>::zeros(d, d);
    // I+ |m⟩ = √(I(I+1) − m(m+1)) |m+1⟩; |m+1⟩ is one row above |m⟩.
    for col in 1..d {
        let m = ms[col];
        raise[(col - 1, col)] = Complex64::from((casimir - m * (m + 1.0)).sqrt());
    }
    let lower = raise.adjoint();
    let half = Complex64::from(0.5);
    let x = (&raise + &lower) * half;
    let y = (&raise - &lower) * Complex64::new(0.0, -0.5);
    let z = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        ms.iter().map(|&m| Complex64::from(m)),
    ));
    SpinOperators { x, y, z }
}

/// `f0 = μ_n·g_n·B0/h`.
pub fn larmor_frequency(sys: &SpinSystem, field: &FieldConfig, k: &PhysicalConstants) -> f64 {
    larmor_from_b0(sys.g_n, field.b0, k)
}

pub fn larmor_from_b0(g_n: f64, b0: f64, k: &PhysicalConstants) -> f64 {
    k.mu_n * g_n * b0 / k.h
}

/// Hermitian Hamiltonian in Hz.
#[derive(Debug, Clone)]
pub struct NuclearHamiltonian {
    pub spin: Spin,
    pub matrix: DMatrix<Complex64>,
}

/// Eigenvalues ascending with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

/// Builds `H/h = −f0·I_z + e·q/(2I(2I−1)h)·Σ V_ij I_i I_j`.
///
/// `efg` must be expressed in the laboratory frame (field along z); see
/// [`EfgTensor::in_field_frame`].
pub fn build_hamiltonian(
    sys: &SpinSystem,
    f0: f64,
    efg: &EfgTensor,
    k: &PhysicalConstants,
) -> Result<NuclearHamiltonian> {
    efg.check_traceless()?;
    let ops = spin_operators(sys.spin);
    let mut matrix = &ops.z * Complex64::from(-f0);
    if sys.spin.has_quadrupole() && sys.q != 0.0 {
        let i = sys.spin.value();
        let scale = k.quadrupole_hz_per_efg(sys.q) / (2.0 * i * (2.0 * i - 1.0));
        let comps = ops.components();
        let v = efg.matrix();
        for a in 0..3 {
            for b in 0..3 {
                let vab = v[(a, b)];
                if vab != 0.0 {
                    matrix += (comps[a] * comps[b]) * Complex64::from(scale * vab);
                }
            }
        }
    }
    Ok(NuclearHamiltonian {
        spin: sys.spin,
        matrix,
    })
}

/// Hamiltonian for an axial coupling `f_q` whose symmetry axis makes angle
/// `theta` with the field (axis in the x–z plane).
pub fn axial_hamiltonian(spin: Spin, f0: f64, f_q: f64, theta: f64) -> NuclearHamiltonian {
    let ops = spin_operators(spin);
    let mut matrix = &ops.z * Complex64::from(-f0);
    if spin.has_quadrupole() && f_q != 0.0 {
        let i = spin.value();
        let n = Vector3::new(theta.sin(), 0.0, theta.cos());
        let i_n = ops.along(&n);
        let ident = DMatrix::<Complex64>::identity(spin.dim(), spin.dim());
        let quad = (&i_n * &i_n) * Complex64::from(3.0) - ident * Complex64::from(spin.casimir());
        matrix += quad * Complex64::from(f_q / (4.0 * i * (2.0 * i - 1.0)));
    }
    NuclearHamiltonian { spin, matrix }
}

impl NuclearHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |H − H†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn eigensystem(&self) -> Eigensystem {
        eigensystem(&self.matrix)
    }

    pub fn transitions(&self) -> TransitionTable {
        transition_frequencies(self)
    }
}

/// Exact diagonalization of a Hermitian matrix.
pub fn eigensystem(matrix: &DMatrix<Complex64>) -> Eigensystem {
    let eig = matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_columns(
        &order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>(),
    );
    Eigensystem { values, vectors }
}

/// Inner (central `1/2 ↔ −1/2`) or outer (satellite) transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    Inner,
    Outer,
}

/// A `Δm = ±1` transition `m_hi ↔ m_hi − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub m_hi: Projection,
    pub m_lo: Projection,
    /// `E(m_lo) − E(m_hi)` in Hz; positive when the Zeeman term dominates.
    pub frequency: f64,
    /// `|⟨lo|I_x|hi⟩|²` in the eigenbasis.
    pub dipole_weight: f64,
}

impl Transition {
    pub fn kind(&self) -> TransitionKind {
        kind_of(self.m_hi)
    }

    pub fn label(&self, spin: Spin) -> String {
        transition_label(spin, self.m_hi)
    }
}

pub fn kind_of(m_hi: Projection) -> TransitionKind {
    if m_hi.0 == 1 {
        TransitionKind::Inner
    } else {
        TransitionKind::Outer
    }
}

/// Symbolic name: `inner`, `outer+`/`outer-` for spin 3/2, `m_hi<->m_lo` otherwise.
pub fn transition_label(spin: Spin, m_hi: Projection) -> String {
    if m_hi.0 == 1 {
        return "inner".to_string();
    }
    if spin == Spin::THREE_HALVES {
        match m_hi.0 {
            3 => return "outer+".to_string(),
            -1 => return "outer-".to_string(),
            _ => {}
        }
    }
    format!("{}<->{}", m_hi, m_hi.lower())
}

/// Resolves a symbolic transition name to its upper projection.
pub fn resolve_transition(spin: Spin, name: &str) -> Result<Projection> {
    let lowered = name.trim().to_ascii_lowercase();
    let found = spin
        .projections()
        .take(spin.dim() - 1)
        .find(|&m| {
            let label = transition_label(spin, m);
            label == lowered || (lowered == "outer−" && label == "outer-")
        });
    found.ok_or_else(|| Error::UnknownTransition(name.to_string()))
}

/// The `2I` allowed transitions ordered by descending `m_hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub spin: Spin,
    pub transitions: Vec<Transition>,
    /// Set when an eigenvector's dominant `I_z` overlap fell below
    /// [`LABEL_OVERLAP_THRESHOLD`]; levels were then assigned by sorted
    /// eigenvalue adjacency.
    pub ambiguous: bool,
    /// Level energies in Hz indexed like the basis (`m = I … −I`).
    pub level_energies: Vec<f64>,
}

impl TransitionTable {
    pub fn get(&self, m_hi: Projection) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.m_hi == m_hi)
    }

    pub fn by_label(&self, name: &str) -> Result<&Transition> {
        let m = resolve_transition(self.spin, name)?;
        self.get(m).ok_or_else(|| Error::UnknownTransition(name.to_string()))
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.frequency).collect()
    }
}

/// Assigns eigenvectors to `m` labels. Returns, for each basis index, the
/// eigenvector column carrying that label, plus the ambiguity flag.
pub fn label_levels(spin: Spin, eig: &Eigensystem, zeeman_sign: f64) -> (Vec<usize>, bool) {
    let d = eig.values.len();
    let mut assignment = vec![usize::MAX; d];
    let mut ambiguous = false;
    for col in 0..d {
        let (best, overlap) = (0..d)
            .map(|row| (row, eig.vectors[(row, col)].norm_sqr()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if overlap < LABEL_OVERLAP_THRESHOLD || assignment[best] != usize::MAX {
            ambiguous = true;
            break;
        }
        assignment[best] = col;
    }
    if ambiguous {
        // Sorted adjacency: with −f0·I_z, m = I is lowest when f0 > 0.
        for (basis, slot) in assignment.iter_mut().enumerate() {
            *slot = if zeeman_sign >= 0.0 { basis } else { d - 1 - basis };
        }
    }
    debug_assert_eq!(spin.dim(), d);
    (assignment, ambiguous)
}

/// Transition frequencies and dipole weights from exact diagonalization.
pub fn transition_frequencies(h: &NuclearHamiltonian) -> TransitionTable {
    let spin = h.spin;
    let eig = h.eigensystem();
    let ops = spin_operators(spin);
    // −f0 sits on the diagonal of the Zeeman term, so ⟨I_z⟩-weighted trace
    // gives its sign.
    let zeeman_sign = -(h.matrix.clone() * &ops.z).trace().re;
    let (assignment, ambiguous) = label_levels(spin, &eig, zeeman_sign);
    let level_energies: Vec<f64> = assignment.iter().map(|&c| eig.values[c]).collect();

    let ix_eig = eig.vectors.adjoint() * &ops.x * &eig.vectors;
    let transitions = (0..spin.dim() - 1)
        .map(|k| {
            let m_hi = Projection(spin.doubled() as i32 - 2 * k as i32);
            let hi = assignment[k];
            let lo = assignment[k + 1];
            Transition {
                m_hi,
                m_lo: m_hi.lower(),
                frequency: level_energies[k + 1] - level_energies[k],
                dipole_weight: ix_eig[(lo, hi)].norm_sqr(),
            }
        })
        .collect();
    TransitionTable {
        spin,
        transitions,
        ambiguous,
        level_energies,
    }
}

/// Second Legendre polynomial `(3cos²θ − 1)/2`.
pub fn p2(theta: f64) -> f64 {
    let c = theta.cos();
    (3.0 * c * c - 1.0) / 2.0
}

/// First-order quadrupole shift of `m_hi ↔ m_hi−1` for an axial coupling.
///
/// Equals `−3f_Q(2m−1)/(4I(2I−1)) · P2(cos θ)`: `∓f_Q/2·P2` for the outer
/// lines of a spin 3/2 and zero for the inner line.
pub fn first_order_shift(spin: Spin, f_q: f64, theta: f64, m_hi: Projection) -> f64 {
    if !spin.has_quadrupole() {
        return 0.0;
    }
    let i = spin.value();
    let coupling = 3.0 * f_q / (4.0 * i * (2.0 * i - 1.0));
    -coupling * (2.0 * m_hi.value() - 1.0) * p2(theta)
}

/// Second-order energy of level `m` (Hz) for an axial coupling at angle `theta`.
fn second_order_level(spin: Spin, f_q: f64, f0: f64, theta: f64, m: f64) -> f64 {
    let i = spin.value();
    let cas = spin.casimir();
    let k = 3.0 * f_q / (4.0 * i * (2.0 * i - 1.0));
    let (s, c) = theta.sin_cos();
    // Squared ladder factors; negative values only occur outside the multiplet
    // where the matching matrix element vanishes.
    let up = |m: f64| (cas - m * (m + 1.0)).max(0.0);
    let down = |m: f64| (cas - m * (m - 1.0)).max(0.0);

    let cs2 = c * c * s * s;
    let s4 = s.powi(4);
    let delta_one = cs2 / 4.0 * ((2.0 * m + 1.0).powi(2) * up(m) - (2.0 * m - 1.0).powi(2) * down(m)) / f0;
    let delta_two = s4 / 32.0 * (up(m) * up(m + 1.0) - down(m) * down(m - 1.0)) / f0;
    k * k * (delta_one + delta_two)
}

/// Second-order quadrupole shift of `m_hi ↔ m_hi−1` (Hz).
///
/// For the inner line of a spin 3/2 this is
/// `−3f_Q²/(64 f0) · (1 − cos²θ)(9cos²θ − 1)`.
pub fn second_order_shift(spin: Spin, f_q: f64, f0: f64, theta: f64, m_hi: Projection) -> f64 {
    if !spin.has_quadrupole() || f_q == 0.0 {
        return 0.0;
    }
    let m = m_hi.value();
    second_order_level(spin, f_q, f0, theta, m - 1.0) - second_order_level(spin, f_q, f0, theta, m)
}

/// True when `|f_Q/f0|` exceeds [`PERTURBATIVE_LIMIT`].
pub fn perturbative_regime_violated(f_q: f64, f0: f64) -> bool {
    f0 == 0.0 || (f_q / f0).abs() > PERTURBATIVE_LIMIT
}

/// One row of an angular sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub m_hi: Projection,
    /// Exact-diagonalization frequency minus `f0`.
    pub exact: f64,
    pub first_order: f64,
    pub second_order: f64,
}

impl SweepPoint {
    pub fn perturbative(&self) -> f64 {
        self.first_order + self.second_order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularSweep {
    pub spin: Spin,
    pub f0: f64,
    pub f_q: f64,
    pub points: Vec<SweepPoint>,
    pub perturbative_warning: bool,
}

impl AngularSweep {
    pub fn curve(&self, m_hi: Projection) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(move |p| p.m_hi == m_hi)
    }
}

/// Exact and perturbative shifts for every transition on an even θ grid.
pub fn angular_sweep(
    spin: Spin,
    f0: f64,
    f_q: f64,
    theta_range: (f64, f64),
    n_points: usize,
) -> Result<AngularSweep> {
    if n_points < 2 {
        return Err(Error::InvalidInput("angular sweep needs at least two points".into()));
    }
    let (start, stop) = theta_range;
    let step = (stop - start) / (n_points - 1) as f64;
    let mut points = Vec::with_capacity(n_points * spin.dim());
    for k in 0..n_points {
        let theta = start + step * k as f64;
        let table = axial_hamiltonian(spin, f0, f_q, theta).transitions();
        for t in &table.transitions {
            points.push(SweepPoint {
                theta,
                m_hi: t.m_hi,
                exact: t.frequency - f0,
                first_order: first_order_shift(spin, f_q, theta, t.m_hi),
                second_order: second_order_shift(spin, f_q, f0, theta, t.m_hi),
            });
        }
    }
    Ok(AngularSweep {
        spin,
        f0,
        f_q,
        points,
        perturbative_warning: f_q != 0.0 && perturbative_regime_violated(f_q, f0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const INNER: Projection = Projection(1);
    const OUTER_PLUS: Projection = Projection(3);
    const OUTER_MINUS: Projection = Projection(-1);

    fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a * b - b * a
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn rejects_non_half_integer_spin() {
        assert!(Spin::new(0.75).is_err());
        assert!(Spin::new(0.0).is_err());
        assert!(Spin::new(-0.5).is_err());
        assert_eq!(Spin::new(1.5).unwrap(), Spin::THREE_HALVES);
    }

    #[test]
    fn spin_half_iz_is_pauli() {
        let ops = spin_operators(Spin::HALF);
        assert_eq!(ops.z[(0, 0)], Complex64::from(0.5));
        assert_eq!(ops.z[(1, 1)], Complex64::from(-0.5));
        assert_eq!(ops.z[(0, 1)], Complex64::from(0.0));
    }

    #[test]
    fn ladder_matrix_element_spin_three_halves() {
        let ops = spin_operators(Spin::THREE_HALVES);
        // rows/cols: m = 3/2, 1/2, -1/2, -3/2
        let elem = ops.x[(1, 0)];
        assert!((elem.re - 3f64.sqrt() / 2.0).abs() < 1e-15 && elem.im == 0.0);
        assert!((ops.x[(2, 1)].re - 1.0).abs() < 1e-15);
        let iz2 = &ops.z * &ops.z;
        assert!((iz2.trace().re - 5.0).abs() < 1e-15);
    }

    #[test]
    fn commutation_relations() {
        for twice in 1..=5 {
            let ops = spin_operators(Spin::from_doubled(twice).unwrap());
            let i = Complex64::i();
            assert!(max_abs(&(commutator(&ops.x, &ops.y) - &ops.z * i)) < 1e-12);
            assert!(max_abs(&(commutator(&ops.y, &ops.z) - &ops.x * i)) < 1e-12);
            assert!(max_abs(&(commutator(&ops.z, &ops.x) - &ops.y * i)) < 1e-12);
        }
    }

    #[test]
    fn larmor_frequency_arsenic() {
        let sys = SpinSystem::arsenic75();
        let k = PhysicalConstants::default();
        let f0 = larmor_frequency(&sys, &FieldConfig::along_z(0.35).unwrap(), &k);
        assert!((f0 - 2.550e6).abs() < 1e3, "{f0}");
        assert_eq!(larmor_frequency(&sys, &FieldConfig::along_z(0.0).unwrap(), &k), 0.0);
        assert!((sys.chemical_shift() * 100.0 + 0.40).abs() < 0.005);
    }

    #[test]
    fn field_validation() {
        assert!(FieldConfig::new(-1.0, Vector3::z()).is_err());
        assert!(FieldConfig::new(1.0, Vector3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn zero_efg_is_diagonal_and_degenerate() {
        let sys = SpinSystem::arsenic75();
        let h = build_hamiltonian(&sys, 2.55e6, &EfgTensor::zero(), &PhysicalConstants::default()).unwrap();
        for (k, m) in sys.spin.projections().enumerate() {
            assert!((h.matrix[(k, k)].re + 2.55e6 * m.value()).abs() < 1e-9);
        }
        let table = h.transitions();
        assert_eq!(table.transitions.len(), 3);
        assert!(!table.ambiguous);
        for t in &table.transitions {
            assert!((t.frequency - 2.55e6).abs() < 1e-6);
        }
        let inner = table.get(INNER).unwrap().dipole_weight;
        let outer = table.get(OUTER_PLUS).unwrap().dipole_weight;
        assert!((inner / outer - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn axial_parallel_gives_exact_first_order_pattern() {
        let (f0, f_q) = (2.55e6, 255e3);
        let table = axial_hamiltonian(Spin::THREE_HALVES, f0, f_q, 0.0).transitions();
        assert!((table.get(OUTER_PLUS).unwrap().frequency - (f0 - f_q / 2.0)).abs() < 1e-6);
        assert!((table.get(INNER).unwrap().frequency - f0).abs() < 1e-6);
        assert!((table.get(OUTER_MINUS).unwrap().frequency - (f0 + f_q / 2.0)).abs() < 1e-6);
    }

    #[test]
    fn efg_builder_matches_axial_form() {
        let sys = SpinSystem::arsenic75();
        let k = PhysicalConstants::default();
        let theta: f64 = 0.3;
        let axis = Vector3::new(theta.sin(), 0.0, theta.cos());
        let v_n = 3.0e19;
        let efg = EfgTensor::axial(v_n, &axis);
        let f_q = k.quadrupole_hz_per_efg(sys.q) * v_n;
        let general = build_hamiltonian(&sys, 2.55e6, &efg, &k).unwrap();
        let axial = axial_hamiltonian(sys.spin, 2.55e6, f_q, theta);
        assert!(max_abs(&(&general.matrix - &axial.matrix)) < 1e-8);
    }

    #[test]
    fn coupling_from_measured_efg() {
        let k = PhysicalConstants::default();
        let f_q = k.quadrupole_hz_per_efg(3.14e-29) * 1.005e19;
        assert!((f_q - 76.3e3).abs() < 0.1e3, "{f_q}");
    }

    #[test]
    fn rejects_non_traceless_efg() {
        let sys = SpinSystem::arsenic75();
        let bad = EfgTensor::from_matrix_unchecked(nalgebra::Matrix3::from_diagonal(&Vector3::new(1e19, 0.0, 0.0)));
        assert!(matches!(
            build_hamiltonian(&sys, 1e6, &bad, &PhysicalConstants::default()),
            Err(Error::NotTraceless { .. })
        ));
    }

    #[test]
    fn zero_quadrupole_moment_removes_coupling() {
        let mut sys = SpinSystem::arsenic75();
        sys.q = 0.0;
        let efg = EfgTensor::axial(1e20, &Vector3::new(0.6, 0.0, 0.8));
        let h = build_hamiltonian(&sys, 1e6, &efg, &PhysicalConstants::default()).unwrap();
        let diag = DMatrix::from_diagonal(&h.matrix.diagonal());
        assert!(max_abs(&(&h.matrix - diag)) == 0.0);
    }

    #[test]
    fn hamiltonian_is_hermitian_and_quadrupole_traceless() {
        let h = axial_hamiltonian(Spin::THREE_HALVES, 2.55e6, 255e3, 0.7);
        let scale = max_abs(&h.matrix);
        assert!(h.hermiticity_defect() < 1e-9 * scale);
        let zeeman_only = axial_hamiltonian(Spin::THREE_HALVES, 2.55e6, 0.0, 0.7);
        assert!((h.trace() - zeeman_only.trace()).abs() < 1e-9 * scale);
        let eig = h.eigensystem();
        let sum: f64 = eig.values.iter().sum();
        assert!((sum - h.trace()).abs() < 1e-9 * scale);
    }

    #[test]
    fn eigensystem_of_diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::from(3.0),
            Complex64::from(-1.0),
            Complex64::from(2.0),
        ]));
        let eig = eigensystem(&m);
        assert_eq!(eig.values, vec![-1.0, 2.0, 3.0]);
        for col in 0..3 {
            let dominant = (0..3).map(|r| eig.vectors[(r, col)].norm()).fold(0.0, f64::max);
            assert!((dominant - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn magic_angle_kills_first_order() {
        let magic = (1.0 / 3f64.sqrt()).acos();
        assert!((magic.to_degrees() - 54.7356).abs() < 1e-4);
        let f_q = 255e3;
        assert!(first_order_shift(Spin::THREE_HALVES, f_q, magic, OUTER_PLUS).abs() < 1e-6 * f_q);
        let zero = first_order_shift(Spin::THREE_HALVES, f_q, 0.0, OUTER_PLUS);
        let right = first_order_shift(Spin::THREE_HALVES, f_q, PI / 2.0, OUTER_PLUS);
        assert!((zero.abs() - 127.5e3).abs() < 1e-9);
        assert!((right + 0.5 * zero).abs() < 1e-9);
        assert_eq!(first_order_shift(Spin::THREE_HALVES, f_q, 0.4, INNER), 0.0);
    }

    #[test]
    fn second_order_reference_values() {
        let (f_q, f0) = (255e3, 2.55e6);
        assert_eq!(second_order_shift(Spin::THREE_HALVES, f_q, f0, 0.0, INNER), 0.0);
        let at_right = second_order_shift(Spin::THREE_HALVES, f_q, f0, PI / 2.0, INNER);
        assert!((at_right.abs() - 3.0 * f_q * f_q / (64.0 * f0)).abs() < 1e-9);
        assert!((at_right.abs() - 1.20e3).abs() < 0.01e3);
        let root = (1.0f64 / 3.0).acos();
        assert!((root.to_degrees() - 70.529).abs() < 1e-3);
        assert!(second_order_shift(Spin::THREE_HALVES, f_q, f0, root, INNER).abs() < 1e-9);
    }

    #[test]
    fn second_order_matches_textbook_central_line() {
        let (f_q, f0) = (100e3, 2.0e6);
        for k in 0..=18 {
            let theta = k as f64 * PI / 36.0;
            let c2 = theta.cos().powi(2);
            let textbook = -3.0 * f_q * f_q / (64.0 * f0) * (1.0 - c2) * (9.0 * c2 - 1.0);
            let ours = second_order_shift(Spin::THREE_HALVES, f_q, f0, theta, INNER);
            assert!((ours - textbook).abs() < 1e-9, "theta {theta}: {ours} vs {textbook}");
        }
    }

    #[test]
    fn perturbation_orders_bound_exact_diagonalization() {
        let spin = Spin::THREE_HALVES;
        let f0 = 2.55e6;
        for ratio in [0.01, 0.05, 0.1] {
            let f_q = ratio * f0;
            let sweep = angular_sweep(spin, f0, f_q, (0.0, PI / 2.0), 91).unwrap();
            for p in &sweep.points {
                assert!((p.exact - p.first_order).abs() < 2.0 * f_q * f_q / f0);
                assert!((p.exact - p.perturbative()).abs() < 5.0 * f_q.powi(3) / (f0 * f0));
            }
        }
    }

    #[test]
    fn sign_and_angle_symmetries() {
        let spin = Spin::THREE_HALVES;
        let (f_q, f0) = (80e3, 2.5e6);
        for &theta in &[0.1, 0.5, 1.0, 1.4] {
            for m in [OUTER_PLUS, INNER, OUTER_MINUS] {
                let a = first_order_shift(spin, f_q, theta, m);
                assert!((a - first_order_shift(spin, f_q, -theta, m)).abs() < 1e-9);
                assert!((a - first_order_shift(spin, f_q, PI - theta, m)).abs() < 1e-9);
                assert!((a + first_order_shift(spin, -f_q, theta, m)).abs() < 1e-9);
                let b = second_order_shift(spin, f_q, f0, theta, m);
                assert!((b - second_order_shift(spin, -f_q, f0, theta, m)).abs() < 1e-12);
                assert!((b - second_order_shift(spin, f_q, f0, -theta, m)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inner_line_exact_at_parallel_orientation() {
        for f_q in [10e3, 255e3, 700e3] {
            let t = axial_hamiltonian(Spin::THREE_HALVES, 2.55e6, f_q, 0.0).transitions();
            assert!((t.get(INNER).unwrap().frequency - 2.55e6).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_coupling_sweep_is_flat() {
        let sweep = angular_sweep(Spin::THREE_HALVES, 2.55e6, 0.0, (0.0, PI / 2.0), 10).unwrap();
        assert!(sweep.points.iter().all(|p| p.exact.abs() < 1e-6 && p.first_order == 0.0 && p.second_order == 0.0));
        assert!(!sweep.perturbative_warning);
        assert!(angular_sweep(Spin::THREE_HALVES, 1.0, 0.0, (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn strong_mixing_is_flagged() {
        let h = axial_hamiltonian(Spin::THREE_HALVES, 1e3, 1e6, PI / 3.0);
        assert!(h.transitions().ambiguous);
        let sweep = angular_sweep(Spin::THREE_HALVES, 1e6, 0.5e6, (0.0, 1.0), 3).unwrap();
        assert!(sweep.perturbative_warning);
    }

    #[test]
    fn transition_labels_round_trip() {
        let spin = Spin::THREE_HALVES;
        for name in ["inner", "outer+", "outer-"] {
            let m = resolve_transition(spin, name).unwrap();
            assert_eq!(transition_label(spin, m), name);
        }
        assert!(resolve_transition(spin, "outer").is_err());
        let five_halves = Spin::from_doubled(5).unwrap();
        let m = resolve_transition(five_halves, "5/2<->3/2").unwrap();
        assert_eq!(m, Projection(5));
    }
}
