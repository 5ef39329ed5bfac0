//! Damped Gauss–Newton (Levenberg–Marquardt) fitting and the inverse
//! problems built on it: `g_n` from resonance positions, `f_Q` from angular
//! shifts, and power-law scaling exponents.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::endor::{peak_positions, Spectrum};
use crate::error::{Error, Result};
use crate::spin::{
    axial_hamiltonian, chemical_shift, first_order_shift, larmor_from_b0, second_order_shift, Projection, Spin,
};

type Model<'a> = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync + 'a>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Parameter {
    pub fn free(name: &str, initial: f64) -> Self {
        Self::bounded(name, initial, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn bounded(name: &str, initial: f64, lower: f64, upper: f64) -> Self {
        Parameter {
            name: name.to_string(),
            initial,
            lower,
            upper,
        }
    }
}

/// A weighted least-squares problem `min Σ ((y_i − f(p, x_i))/σ_i)²`.
pub struct FitProblem<'a> {
    pub model: String,
    pub parameters: Vec<Parameter>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    function: Model<'a>,
}

impl fmt::Debug for FitProblem<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FitProblem")
            .field("model", &self.model)
            .field("parameters", &self.parameters)
            .field("n_data", &self.x.len())
            .finish()
    }
}

impl<'a> FitProblem<'a> {
    pub fn new(
        model: &str,
        parameters: Vec<Parameter>,
        x: Vec<f64>,
        y: Vec<f64>,
        sigma: Option<Vec<f64>>,
        function: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'a,
    ) -> Result<Self> {
        if parameters.is_empty() {
            return Err(Error::InvalidProblem("no parameters".into()));
        }
        if x.len() != y.len() || sigma.as_ref().is_some_and(|s| s.len() != x.len()) {
            return Err(Error::InvalidProblem("data columns differ in length".into()));
        }
        if x.len() < parameters.len() {
            return Err(Error::InvalidProblem(format!(
                "{} data points for {} parameters",
                x.len(),
                parameters.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite data".into()));
        }
        if let Some(s) = &sigma {
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidProblem("σ must be positive and finite".into()));
            }
        }
        for p in &parameters {
            if !(p.lower <= p.initial && p.initial <= p.upper) || !p.initial.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "initial {} = {} outside [{}, {}]",
                    p.name, p.initial, p.lower, p.upper
                )));
            }
        }
        let problem = FitProblem {
            model: model.to_string(),
            parameters,
            x,
            y,
            sigma,
            function: Box::new(function),
        };
        let start: Vec<f64> = problem.parameters.iter().map(|p| p.initial).collect();
        if problem.residuals(&start).iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidProblem("model not evaluable at the initial point".into()));
        }
        Ok(problem)
    }

    pub fn evaluate(&self, p: &[f64], x: f64) -> f64 {
        (self.function)(p, x)
    }

    /// Weighted residuals `(y − f)/σ`.
    pub fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(&self.y).enumerate().map(|(i, (&x, &y))| {
                let w = self.sigma.as_ref().map_or(1.0, |s| s[i]);
                (y - self.evaluate(p, x)) / w
            }),
        )
    }

    pub fn loss(&self, p: &[f64]) -> f64 {
        self.residuals(p).norm_squared()
    }

    fn project(&self, p: &mut [f64]) {
        for (v, b) in p.iter_mut().zip(&self.parameters) {
            *v = v.clamp(b.lower, b.upper);
        }
    }

    /// Jacobian of the weighted model values (`−∂r/∂p`), central differences
    /// folded to one side at a bound.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(n, p.len());
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        for j in 0..p.len() {
            let step = (1e-6 * p[j].abs()).max(1e-9);
            let b = &self.parameters[j];
            hi[j] = (p[j] + step).min(b.upper);
            lo[j] = (p[j] - step).max(b.lower);
            let span = hi[j] - lo[j];
            if span > 0.0 {
                for i in 0..n {
                    let w = self.sigma.as_ref().map_or(1.0, |s| s[i]);
                    jac[(i, j)] = (self.evaluate(&hi, self.x[i]) - self.evaluate(&lo, self.x[i])) / (span * w);
                }
            }
            hi[j] = p[j];
            lo[j] = p[j];
        }
        jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub loss_rel_tol: f64,
    pub gradient_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            loss_rel_tol: 1e-10,
            gradient_tol: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `√(Σ r²)` of the weighted residuals.
    pub residual: f64,
    pub gradient_norm: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: &'a str,
    estimates: BTreeMap<&'a str, f64>,
    sigmas: BTreeMap<&'a str, f64>,
    residual: f64,
    converged: bool,
    n_iter: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.estimates[k], self.sigmas[k]))
    }

    /// `{model, estimates, sigmas, residual, converged, n_iter}`.
    pub fn to_json(&self) -> serde_json::Value {
        let names = self.names.iter().map(String::as_str);
        let report = FitReport {
            model: &self.model,
            estimates: names.clone().zip(self.estimates.iter().copied()).collect(),
            sigmas: names.zip(self.sigmas.iter().copied()).collect(),
            residual: self.residual,
            converged: self.converged,
            n_iter: self.n_iter,
        };
        serde_json::to_value(report).expect("plain data serializes")
    }
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b)).or_else(|| a.clone().lu().solve(b))
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and projection onto
/// the parameter bounds.
pub fn least_squares(problem: &FitProblem<'_>, opts: &LmOptions) -> Result<FitResult> {
    let np = problem.parameters.len();
    let mut p: Vec<f64> = problem.parameters.iter().map(|q| q.initial).collect();
    let mut r = problem.residuals(&p);
    let mut loss = r.norm_squared();
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut n_iter = 0;
    let mut gradient_norm = f64::INFINITY;

    while n_iter < opts.max_iterations {
        n_iter += 1;
        let jac = problem.jacobian(&p);
        let jtj = jac.transpose() * &jac;
        // r = y − f, so the loss gradient is −2 Jᵀr; Jᵀr is the descent direction.
        let g = jac.transpose() * &r;
        gradient_norm = projected_gradient_norm(problem, &p, &g);
        if gradient_norm < opts.gradient_tol || loss == 0.0 {
            converged = true;
            break;
        }
        let diag: Vec<f64> = (0..np).map(|j| jtj[(j, j)].max(1e-12 * jtj.diagonal().max().max(1e-300))).collect();
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for j in 0..np {
                a[(j, j)] += lambda * diag[j];
            }
            let Some(delta) = solve_spd(&a, &g) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            let r_trial = problem.residuals(&trial);
            let loss_trial = r_trial.norm_squared();
            if loss_trial.is_finite() && loss_trial <= loss {
                let rel = (loss - loss_trial) / loss.max(f64::MIN_POSITIVE);
                let moved = trial.iter().zip(&p).any(|(a, b)| a != b);
                p = trial;
                r = r_trial;
                loss = loss_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.loss_rel_tol || !moved {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: a (constrained) stationary point
            // to working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let jac = problem.jacobian(&p);
    let jtj = jac.transpose() * &jac;
    let free: Vec<usize> = (0..np).filter(|&j| jac.column(j).norm() > 0.0).collect();
    if free.len() < np {
        return Err(Error::SingularNormalEquations);
    }
    let inv = jtj.clone().try_inverse().ok_or(Error::SingularNormalEquations)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularNormalEquations);
    }
    let dof = (problem.x.len() - np).max(1) as f64;
    let s2 = loss / dof;
    let cov = inv * s2;
    let sigmas = (0..np).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        model: problem.model.clone(),
        names: problem.parameters.iter().map(|q| q.name.clone()).collect(),
        estimates: p,
        sigmas,
        residual: loss.sqrt(),
        gradient_norm,
        n_iter,
        converged,
        covariance: (0..np).map(|i| (0..np).map(|j| cov[(i, j)]).collect()).collect(),
    })
}

/// Gradient norm ignoring components that push against an active bound.
fn projected_gradient_norm(problem: &FitProblem<'_>, p: &[f64], g: &DVector<f64>) -> f64 {
    g.iter()
        .zip(p)
        .zip(&problem.parameters)
        .map(|((&gj, &pj), b)| {
            let blocked = (pj <= b.lower && gj < 0.0) || (pj >= b.upper && gj > 0.0);
            if blocked {
                0.0
            } else {
                gj * gj
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// `g_n` fit with the derived chemical shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnFit {
    pub result: FitResult,
    pub g_n: f64,
    pub sigma: f64,
    /// Relative to `g_n_free`.
    pub chemical_shift: f64,
}

/// Fits unstrained single-dip resonance positions to `f0 = μ_n g_n B0/h`.
pub fn fit_gn(spectra: &[Spectrum], b0: &[f64], g_n_free: f64, k: &PhysicalConstants) -> Result<GnFit> {
    if spectra.len() != b0.len() || spectra.is_empty() {
        return Err(Error::InvalidProblem("one field per spectrum required".into()));
    }
    let mut centers = Vec::with_capacity(spectra.len());
    for (i, spec) in spectra.iter().enumerate() {
        let peaks = peak_positions(spec);
        if peaks.len() != 1 || peaks[0].multiplet {
            return Err(Error::InvalidProblem(format!(
                "spectrum {i} has {} dips; the g_n model needs exactly one",
                peaks.len()
            )));
        }
        centers.push(peaks[0].center);
    }
    let unit = larmor_from_b0(1.0, 1.0, k);
    let guess = centers.iter().zip(b0).map(|(f, b)| f / (unit * b)).sum::<f64>() / centers.len() as f64;
    let problem = FitProblem::new(
        "larmor-gn",
        vec![Parameter::bounded("g_n", guess, 0.0, 10.0 * guess.max(1.0))],
        b0.to_vec(),
        centers,
        None,
        move |p: &[f64], b: f64| unit * p[0] * b,
    )?;
    let result = least_squares(&problem, &LmOptions::default())?;
    let (g_n, sigma) = (result.estimates[0], result.sigmas[0]);
    Ok(GnFit {
        g_n,
        sigma,
        chemical_shift: chemical_shift(g_n, g_n_free),
        result,
    })
}

/// Angular-dependence model used by [`fit_fq_angular`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftOrder {
    /// Outer `I ↔ I−1` line, dominated by the first-order shift.
    First,
    /// Inner `1/2 ↔ −1/2` line, which only shifts at second order.
    Second,
}

impl ShiftOrder {
    pub fn transition(self, spin: Spin) -> Projection {
        match self {
            ShiftOrder::First => Projection(spin.doubled() as i32),
            ShiftOrder::Second => Projection(1),
        }
    }
}

/// Fits `f_Q` to angular shifts `(θ, f − f0)` with the exact-diagonalization
/// frequency of the transition selected by `order`.
pub fn fit_fq_angular(shifts: &[(f64, f64)], order: ShiftOrder, f0: f64, spin: Spin) -> Result<FitResult> {
    if shifts.len() < 4 {
        return Err(Error::InvalidProblem(format!("{} angles, need at least 4", shifts.len())));
    }
    let (lo, hi) = shifts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.0), b.max(s.0)));
    if hi - lo < 60f64.to_radians() - 1e-12 {
        return Err(Error::InvalidProblem("angles must span at least 60°".into()));
    }
    let m_hi = order.transition(spin);
    // Per-unit sensitivity of the perturbative model.
    let unit = |theta: f64| match order {
        ShiftOrder::First => first_order_shift(spin, 1.0, theta, m_hi),
        ShiftOrder::Second => second_order_shift(spin, 1.0, 1.0, theta, m_hi),
    };
    let peak = match order {
        ShiftOrder::First => first_order_shift(spin, 1.0, 0.0, m_hi).abs(),
        ShiftOrder::Second => (0..=900)
            .map(|k| unit(k as f64 * std::f64::consts::PI / 1800.0).abs())
            .fold(0.0, f64::max),
    };
    if shifts.iter().all(|&(t, _)| unit(t).abs() < 0.05 * peak) {
        return Err(Error::InvalidProblem(
            "degenerate angle set: the shift is insensitive to f_Q at every angle".into(),
        ));
    }
    let sgg: f64 = shifts.iter().map(|&(t, _)| unit(t).powi(2)).sum();
    let sgy: f64 = shifts.iter().map(|&(t, y)| unit(t) * y).sum();
    let (initial, lower) = match order {
        ShiftOrder::First => (sgy / sgg, f64::NEG_INFINITY),
        // Second-order shift is ∝ f_Q²/f0.
        ShiftOrder::Second => (((sgy / sgg) * f0).max(0.0).sqrt().max(1e-3 * f0), 0.0),
    };
    let problem = FitProblem::new(
        match order {
            ShiftOrder::First => "angular-first-order",
            ShiftOrder::Second => "angular-second-order",
        },
        vec![Parameter::bounded("f_Q", initial, lower, f0)],
        shifts.iter().map(|s| s.0).collect(),
        shifts.iter().map(|s| s.1).collect(),
        None,
        move |p: &[f64], theta: f64| {
            let table = axial_hamiltonian(spin, f0, p[0], theta).transitions();
            table.get(m_hi).map_or(f64::NAN, |t| t.frequency - f0)
        },
    )?;
    least_squares(&problem, &LmOptions::default())
}

/// Log-log fit `T2 = a·n^k`; estimates are `exponent` and `prefactor`.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::InvalidProblem("scaling fit needs at least 2 points".into()));
    }
    if points.iter().any(|&(n, t)| !(n >= 1.0) || !(t > 0.0)) {
        return Err(Error::InvalidProblem("pulse counts must be ≥ 1 and T2 positive".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let problem = FitProblem::new(
        "power-law-scaling",
        vec![Parameter::free("exponent", 0.0), Parameter::free("log_prefactor", y[0])],
        x,
        y,
        None,
        |p: &[f64], x: f64| p[1] + p[0] * x,
    )?;
    let mut result = least_squares(&problem, &LmOptions::default())?;
    result.names.push("prefactor".into());
    let a = result.estimates[1].exp();
    result.estimates.push(a);
    result.sigmas.push(a * result.sigmas[1]);
    Ok(result)
}
