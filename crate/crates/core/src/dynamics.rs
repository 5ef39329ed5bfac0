//! Pulses on the nuclear density matrix, square-pulse excitation profiles and
//! coherence decay under CPMG sequences with power-law dephasing noise.
//!
//! Sequences are simulated in the interaction frame of the static
//! Hamiltonian: pulses are ideal rotations on the addressed two-level
//! subspace, delays are identities. Dephasing enters only through the
//! filter-function decay `W(t) = exp[−χ(t)]`,
//!
//! ```text
//! χ(t) = (1/π) ∫ S(ω) · F_n(ωt)/ω² dω,    S(ω) = A/ω^α on [ω_lo, ω_hi]
//! ```
//!
//! with `F_1(x) = 8 sin⁴(x/4)` for the Hahn echo.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{least_squares, FitProblem, LmOptions, Parameter};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::spin::{
    eigensystem, label_levels, resolve_transition, spin_operators, transition_frequencies, NuclearHamiltonian,
    Projection, Spin, TransitionTable,
};

/// Density matrix in the `I_z` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub matrix: DMatrix<Complex64>,
}

impl DensityState {
    /// Validates unit trace, Hermiticity and positivity (to 1e-9).
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput("density matrix must be square".into()));
        }
        let state = DensityState { matrix };
        if (state.trace() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("density matrix trace {} ≠ 1", state.trace())));
        }
        if state.hermiticity_defect() > 1e-9 {
            return Err(Error::InvalidInput("density matrix is not Hermitian".into()));
        }
        if state.eigenvalues().iter().any(|&l| l < -1e-9) {
            return Err(Error::InvalidInput("density matrix is not positive".into()));
        }
        Ok(state)
    }

    /// Pure `|m⟩⟨m|`.
    pub fn pure(spin: Spin, m: Projection) -> Result<Self> {
        let k = spin
            .index_of(m)
            .ok_or_else(|| Error::InvalidInput(format!("m = {m} not in spin {spin}")))?;
        let mut matrix = DMatrix::zeros(spin.dim(), spin.dim());
        matrix[(k, k)] = Complex64::from(1.0);
        Ok(DensityState { matrix })
    }

    /// Diagonal state with the given (normalized) populations.
    pub fn from_populations(populations: &[f64]) -> Result<Self> {
        let total: f64 = populations.iter().sum();
        let diag = DVector::from_iterator(populations.len(), populations.iter().map(|p| Complex64::from(p / total)));
        Self::new(DMatrix::from_diagonal(&diag))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigensystem(&self.matrix).values
    }

    /// `U ρ U†`.
    pub fn evolve(&self, u: &DMatrix<Complex64>) -> Self {
        DensityState {
            matrix: u * &self.matrix * u.adjoint(),
        }
    }
}

/// What a pulse addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PulseTarget {
    /// A symbolic transition (`inner`, `outer+`, `outer-`, `3/2<->1/2`),
    /// bound to the transition table when the pulse is applied.
    Transition(String),
    /// A hard pulse rotating the whole multiplet.
    NonSelective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub target: PulseTarget,
    /// Nominal flip angle, rad.
    pub flip: f64,
    /// s
    pub duration: f64,
    /// rad
    pub phase: f64,
    /// Carrier in Hz; `None` binds it to the target transition frequency.
    pub carrier: Option<f64>,
    /// Transition the flip angle is calibrated on; defaults to the target.
    pub calibration: Option<String>,
}

impl Pulse {
    pub fn selective(target: &str, flip: f64, duration: f64, phase: f64) -> Self {
        Pulse {
            target: PulseTarget::Transition(target.to_string()),
            flip,
            duration,
            phase,
            carrier: None,
            calibration: None,
        }
    }

    /// Spectral width `1/duration`, Hz.
    pub fn bandwidth(&self) -> f64 {
        1.0 / self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SequenceEvent {
    Pulse(Pulse),
    Wait { duration: f64 },
    Repeat { count: u32, body: Vec<SequenceEvent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub name: String,
    pub events: Vec<SequenceEvent>,
}

impl PulseSequence {
    pub fn new(name: impl Into<String>, events: Vec<SequenceEvent>) -> Result<Self> {
        let seq = PulseSequence {
            name: name.into(),
            events,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(events: &[SequenceEvent]) -> Result<()> {
            for e in events {
                match e {
                    SequenceEvent::Pulse(p) if !(p.duration > 0.0) => {
                        return Err(Error::InvalidSequence(format!("pulse duration {} must be positive", p.duration)))
                    }
                    SequenceEvent::Wait { duration } if !(*duration > 0.0) => {
                        return Err(Error::InvalidSequence(format!("wait duration {duration} must be positive")))
                    }
                    SequenceEvent::Repeat { count: 0, .. } => {
                        return Err(Error::InvalidSequence("repeat count must be at least 1".into()))
                    }
                    SequenceEvent::Repeat { body, .. } => check(body)?,
                    _ => {}
                }
            }
            Ok(())
        }
        check(&self.events)
    }

    /// Events with loops unrolled.
    pub fn flatten(&self) -> Vec<SequenceEvent> {
        fn walk(events: &[SequenceEvent], out: &mut Vec<SequenceEvent>) {
            for e in events {
                match e {
                    SequenceEvent::Repeat { count, body } => {
                        for _ in 0..*count {
                            walk(body, out);
                        }
                    }
                    other => out.push(other.clone()),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.events, &mut out);
        out
    }

    pub fn total_duration(&self) -> f64 {
        self.flatten()
            .iter()
            .map(|e| match e {
                SequenceEvent::Pulse(p) => p.duration,
                SequenceEvent::Wait { duration } => *duration,
                SequenceEvent::Repeat { .. } => unreachable!("flattened"),
            })
            .sum()
    }

    pub fn pulse_count(&self) -> usize {
        self.flatten().iter().filter(|e| matches!(e, SequenceEvent::Pulse(_))).count()
    }
}

/// Transition table with eigenvectors reordered so column `k` carries the
/// label of basis state `k`.
pub fn labeled_eigenbasis(h: &NuclearHamiltonian) -> (TransitionTable, DMatrix<Complex64>) {
    let table = transition_frequencies(h);
    let eig = h.eigensystem();
    let zeeman_sign = -(h.matrix.clone() * &spin_operators(h.spin).z).trace().re;
    let (assignment, _) = label_levels(h.spin, &eig, zeeman_sign);
    let columns: Vec<_> = assignment.iter().map(|&c| eig.vectors.column(c).into_owned()).collect();
    (table, DMatrix::from_columns(&columns))
}

fn two_level_rotation(theta: f64, phase: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    let minus_i = Complex64::new(0.0, -1.0);
    [
        [Complex64::from(c), minus_i * s * Complex64::from_polar(1.0, -phase)],
        [minus_i * s * Complex64::from_polar(1.0, phase), Complex64::from(c)],
    ]
}

/// Unitary of `pulse` for Hamiltonian `h`, after checking that the carrier
/// addresses exactly one transition.
pub fn pulse_unitary(pulse: &Pulse, h: &NuclearHamiltonian) -> Result<DMatrix<Complex64>> {
    let spin = h.spin;
    let d = spin.dim();
    let name = match &pulse.target {
        PulseTarget::NonSelective => {
            let ops = spin_operators(spin);
            let generator = &ops.x * Complex64::from(pulse.phase.cos()) + &ops.y * Complex64::from(pulse.phase.sin());
            let eig = eigensystem(&generator);
            let phases = DVector::from_iterator(
                d,
                eig.values.iter().map(|&l| Complex64::from_polar(1.0, -pulse.flip * l)),
            );
            return Ok(&eig.vectors * DMatrix::from_diagonal(&phases) * eig.vectors.adjoint());
        }
        PulseTarget::Transition(name) => name,
    };

    let m_hi = resolve_transition(spin, name)?;
    let (table, vectors) = labeled_eigenbasis(h);
    let target = *table.get(m_hi).ok_or_else(|| Error::UnknownTransition(name.clone()))?;
    let carrier = pulse.carrier.unwrap_or(target.frequency);
    let bandwidth = pulse.bandwidth();
    let detuning = carrier - target.frequency;
    if detuning.abs() > 10.0 * bandwidth {
        return Err(Error::OffResonance {
            carrier,
            transition: name.clone(),
            detuning,
        });
    }
    if let Some(other) = table
        .transitions
        .iter()
        .find(|t| t.m_hi != m_hi && (t.frequency - carrier).abs() < bandwidth)
    {
        return Err(Error::AmbiguousCarrier {
            carrier,
            first: target.label(spin),
            second: other.label(spin),
        });
    }

    let reference = match &pulse.calibration {
        Some(cal) => {
            let m = resolve_transition(spin, cal)?;
            table.get(m).ok_or_else(|| Error::UnknownTransition(cal.clone()))?.dipole_weight
        }
        None => target.dipole_weight,
    };
    let angle = pulse.flip * (target.dipole_weight / reference).sqrt();
    let rot = two_level_rotation(angle, pulse.phase);

    let hi = spin.index_of(m_hi).expect("resolved transition");
    let lo = hi + 1;
    let basis = [vectors.column(hi).into_owned(), vectors.column(lo).into_owned()];
    let mut u = DMatrix::<Complex64>::identity(d, d);
    for (p, bp) in basis.iter().enumerate() {
        for (q, bq) in basis.iter().enumerate() {
            let delta = if p == q { 1.0 } else { 0.0 };
            let coeff = rot[p][q] - Complex64::from(delta);
            u += bp * bq.adjoint() * coeff;
        }
    }
    Ok(u)
}

/// Applies one pulse as an ideal rotation on the resonant subspace.
pub fn apply_pulse(rho: &DensityState, pulse: &Pulse, h: &NuclearHamiltonian) -> Result<DensityState> {
    Ok(rho.evolve(&pulse_unitary(pulse, h)?))
}

/// Runs a sequence; delays are identities in the interaction frame.
pub fn run_sequence(rho: &DensityState, seq: &PulseSequence, h: &NuclearHamiltonian) -> Result<DensityState> {
    seq.validate()?;
    let mut state = rho.clone();
    for event in seq.flatten() {
        if let SequenceEvent::Pulse(p) = event {
            state = apply_pulse(&state, &p, h)?;
        }
    }
    Ok(state)
}

/// Transition probability of a square pulse that is a π pulse on resonance,
/// at `detuning` Hz from the line.
pub fn excitation_profile(duration: f64, detuning: f64) -> f64 {
    let rabi = PI / duration;
    let offset = 2.0 * PI * detuning;
    let effective = rabi.hypot(offset);
    let s = (effective * duration / 2.0).sin();
    (rabi / effective).powi(2) * s * s
}

/// `F_n(x)` by direct summation over the toggling-frame sign changes.
pub fn cpmg_filter_sum(n: u32, x: f64) -> f64 {
    let sign_end = if n % 2 == 1 { 1.0 } else { -1.0 };
    let mut y = Complex64::from(1.0) + Complex64::from_polar(sign_end, x);
    for j in 1..=n {
        let delta = (j as f64 - 0.5) / n as f64;
        let sign = if j % 2 == 1 { -2.0 } else { 2.0 };
        y += Complex64::from_polar(sign, x * delta);
    }
    y.norm_sqr() / 2.0
}

/// Dimensionless CPMG filter `F_n(x)` at `x = ωt` for `n` ideal π pulses at
/// `t(j − ½)/n`. `F_1(x) = 8 sin⁴(x/4)`.
pub fn cpmg_filter(n: u32, x: f64) -> f64 {
    let nf = n as f64;
    let denom = (x / (2.0 * nf)).cos();
    if denom.abs() < 1e-4 {
        return cpmg_filter_sum(n, x);
    }
    let head = 8.0 * (x / (4.0 * nf)).sin().powi(4);
    let tail = if n.is_multiple_of(2) { (x / 2.0).sin() } else { (x / 2.0).cos() };
    head * tail * tail / (denom * denom)
}

/// `|F(ωt)|²/ω²` in s², the weight of noise at angular frequency `omega`.
pub fn cpmg_filter_function(n: u32, total_time: f64, omega: f64) -> f64 {
    if omega == 0.0 {
        return 0.0;
    }
    cpmg_filter(n, omega * total_time) / (omega * omega)
}

/// Default quadrature cutoffs, rad/s.
pub const DEFAULT_OMEGA_LOW: f64 = 2.0 * PI * 0.01;
pub const DEFAULT_OMEGA_HIGH: f64 = 2.0 * PI * 1.0e6;

/// Power-law dephasing PSD `S(ω) = A/ω^α` between two cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub alpha: f64,
    /// rad²/s^(1−α)
    pub amplitude: f64,
    pub omega_low: f64,
    pub omega_high: f64,
}

impl NoiseModel {
    pub fn new(alpha: f64, amplitude: f64, omega_low: f64, omega_high: f64) -> Result<Self> {
        let model = NoiseModel {
            alpha,
            amplitude,
            omega_low,
            omega_high,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_default_cutoffs(alpha: f64, amplitude: f64) -> Result<Self> {
        Self::new(alpha, amplitude, DEFAULT_OMEGA_LOW, DEFAULT_OMEGA_HIGH)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=6.0).contains(&self.alpha) {
            return Err(Error::InvalidNoise(format!("exponent {} outside [0, 6]", self.alpha)));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidNoise("amplitude must be finite and non-negative".into()));
        }
        if !(self.omega_low > 0.0 && self.omega_low < self.omega_high && self.omega_high.is_finite()) {
            return Err(Error::InvalidNoise("cutoffs must satisfy 0 < low < high".into()));
        }
        Ok(())
    }

    pub fn psd(&self, omega: f64) -> f64 {
        if omega < self.omega_low || omega > self.omega_high {
            0.0
        } else {
            self.amplitude / omega.powf(self.alpha)
        }
    }

    /// Same spectrum shape, amplitude rescaled so the `n`-pulse decay reaches
    /// `1/e` at `t2`.
    pub fn calibrated(&self, n: u32, t2: f64) -> Result<Self> {
        let unit = NoiseModel {
            amplitude: 1.0,
            ..*self
        };
        let chi = decay_exponent(&unit, n, t2)?;
        if !(chi > 0.0) {
            return Err(Error::InvalidNoise("spectrum produces no dephasing at the calibration time".into()));
        }
        Ok(NoiseModel {
            amplitude: 1.0 / chi,
            ..*self
        })
    }
}

/// `χ(t)` for `n` pulses; `W(t) = exp(−χ)`.
pub fn decay_exponent(noise: &NoiseModel, n: u32, t: f64) -> Result<f64> {
    noise.validate()?;
    if n == 0 {
        return Err(Error::InvalidSequence("CPMG needs at least one π pulse".into()));
    }
    if t <= 0.0 || noise.amplitude == 0.0 {
        return Ok(0.0);
    }
    // In u = ln(ωt): χ = A t^{α+1}/π ∫ e^{−(α+1)u} F_n(e^u) du.
    let power = noise.alpha + 1.0;
    let lo = (noise.omega_low * t).ln();
    let hi = (noise.omega_high * t).ln();
    let opts = QuadratureOptions {
        rel_tol: 1e-6,
        abs_tol: 0.0,
        max_intervals: 200_000,
        initial_panels: 64,
    };
    let integral = integrate(
        |u| {
            let x = u.exp();
            (-power * u).exp() * cpmg_filter(n, x)
        },
        lo,
        hi,
        &opts,
    )?;
    Ok(noise.amplitude * t.powf(power) * integral.value / PI)
}

/// Coherence amplitudes sampled at `(time, amplitude)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub n: u32,
    pub transition: Option<String>,
    pub points: Vec<(f64, f64)>,
}

impl DecayCurve {
    pub const CSV_HEADER: &'static str = "n,t_s,amplitude";

    /// Rows of `n,t,amplitude` without header, so several curves concatenate.
    pub fn csv_rows(&self) -> String {
        self.points.iter().map(|(t, w)| format!("{},{t},{w}\n", self.n)).collect()
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }
}

pub fn coherence_decay(noise: &NoiseModel, n: u32, t_grid: &[f64]) -> Result<DecayCurve> {
    let points = t_grid
        .iter()
        .map(|&t| Ok((t, (-decay_exponent(noise, n, t)?).exp())))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayCurve {
        n,
        transition: None,
        points,
    })
}

/// Time at which `χ(t) = 1`, by bracketing and bisection in `ln t`.
pub fn coherence_time(noise: &NoiseModel, n: u32) -> Result<f64> {
    if noise.amplitude == 0.0 {
        return Err(Error::InsufficientDecay("noise amplitude is zero".into()));
    }
    let f = |log_t: f64| decay_exponent(noise, n, log_t.exp()).map(|chi| chi - 1.0);
    let (mut lo, mut hi) = (-12.0f64, 0.0f64);
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    let mut guard = 0;
    while f_lo > 0.0 || f_hi < 0.0 {
        guard += 1;
        if guard > 40 {
            return Err(Error::InsufficientDecay("could not bracket χ(t) = 1".into()));
        }
        if f_lo > 0.0 {
            lo -= 4.0;
            f_lo = f(lo)?;
        }
        if f_hi < 0.0 {
            hi += 4.0;
            f_hi = f(hi)?;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-12 {
            break;
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Geometric grid spanning the decay from `W ≈ 0.99` to `W ≈ e^{-3}` around
/// the `χ = 1` time.
pub fn decay_time_grid(noise: &NoiseModel, n: u32, points: usize) -> Result<Vec<f64>> {
    let t2 = coherence_time(noise, n)?;
    let start = 0.15 * t2;
    let stop = 1.8 * t2;
    let ratio = (stop / start).powf(1.0 / (points.max(2) - 1) as f64);
    Ok((0..points.max(2)).map(|k| start * ratio.powi(k as i32)).collect())
}

/// Stretched-exponential decay parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExp {
    pub t2: f64,
    pub beta: f64,
    pub t2_sigma: f64,
    pub beta_sigma: f64,
}

/// Least-squares fit of `exp[−(t/T2)^β]`.
pub fn t2_extract(curve: &DecayCurve) -> Result<StretchedExp> {
    let pts: Vec<(f64, f64)> = curve.points.iter().copied().filter(|&(t, _)| t > 0.0).collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientDecay(format!("{} points, need at least 5", pts.len())));
    }
    let max_amp = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let min_amp = pts.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    if max_amp < 0.95 || min_amp > 0.2 {
        return Err(Error::InsufficientDecay(format!(
            "amplitudes span [{min_amp:.3}, {max_amp:.3}], need [0.2, 0.95]"
        )));
    }
    // Linearized start: ln(−ln W) = β ln t − β ln T2.
    let lin: Vec<(f64, f64)> = pts
        .iter()
        .filter(|&&(_, w)| w > 1e-6 && w < 1.0 - 1e-6)
        .map(|&(t, w)| (t.ln(), (-w.ln()).ln()))
        .collect();
    let (beta0, t20) = if lin.len() >= 2 {
        let n = lin.len() as f64;
        let mx = lin.iter().map(|p| p.0).sum::<f64>() / n;
        let my = lin.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = lin.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = lin.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let beta = (sxy / sxx).clamp(0.2, 8.0);
        (beta, (mx - my / beta).exp())
    } else {
        (1.0, pts[pts.len() / 2].0)
    };

    let t_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let problem = FitProblem::new(
        "stretched-exponential",
        vec![
            Parameter::bounded("T2", t20.clamp(1e-12, 1e3 * t_max), 1e-12, 1e3 * t_max),
            Parameter::bounded("beta", beta0, 0.1, 10.0),
        ],
        pts.iter().map(|p| p.0).collect(),
        pts.iter().map(|p| p.1).collect(),
        None,
        |p: &[f64], t: f64| (-(t / p[0]).powf(p[1])).exp(),
    )?;
    let fit = least_squares(&problem, &LmOptions::default())?;
    Ok(StretchedExp {
        t2: fit.estimates[0],
        beta: fit.estimates[1],
        t2_sigma: fit.sigmas[0],
        beta_sigma: fit.sigmas[1],
    })
}
