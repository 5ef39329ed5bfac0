//! Cross-field checks on a parsed configuration.

use super::config::{ExperimentConfig, StrainMode, SWEEP_VARIABLES};
use super::units::Dimension;
use super::{ParseDiagnostic, Severity};
use crate::constants::PhysicalConstants;
use crate::dynamics::{NoiseModel, PulseTarget, SequenceEvent};
use crate::spin::{perturbative_regime_violated, resolve_transition};

struct Collector<'a> {
    cfg: &'a ExperimentConfig,
    out: Vec<ParseDiagnostic>,
}

impl Collector<'_> {
    fn at(&mut self, severity: Severity, key: &str, message: String) {
        let section = key.split('.').next().unwrap_or(key);
        let (line, column) = self
            .cfg
            .source
            .position(key)
            .or_else(|| self.cfg.source.position(section))
            .unwrap_or((1, 1));
        self.out.push(ParseDiagnostic {
            severity,
            line,
            column,
            message,
            token: key.rsplit('.').next().unwrap_or(key).to_string(),
        });
    }

    fn error(&mut self, key: &str, message: impl Into<String>) {
        self.at(Severity::Error, key, message.into());
    }

    fn warning(&mut self, key: &str, message: impl Into<String>) {
        self.at(Severity::Warning, key, message.into());
    }
}

fn check_events(c: &mut Collector<'_>, key: &str, events: &[SequenceEvent], spin: crate::spin::Spin) {
    for e in events {
        match e {
            SequenceEvent::Pulse(p) => {
                if let PulseTarget::Transition(name) = &p.target {
                    if resolve_transition(spin, name).is_err() {
                        c.error(key, format!("pulse addresses unknown transition `{name}`"));
                    }
                }
                if !(p.duration > 0.0) {
                    c.error(key, "pulse duration must be positive");
                }
            }
            SequenceEvent::Wait { duration } if !(*duration > 0.0) => c.error(key, "wait duration must be positive"),
            SequenceEvent::Wait { .. } => {}
            SequenceEvent::Repeat { count, body } => {
                if *count == 0 {
                    c.error(key, "repeat count must be at least 1");
                }
                check_events(c, key, body, spin);
            }
        }
    }
}

/// Diagnostics for `cfg`; never fails.
pub fn validate(cfg: &ExperimentConfig) -> Vec<ParseDiagnostic> {
    let k = PhysicalConstants::CODATA;
    let mut c = Collector { cfg, out: Vec::new() };

    if !cfg.system.g_n.is_finite() || cfg.system.g_n == 0.0 {
        c.error("system.g_n", "g_n must be non-zero");
    }
    if cfg.system.q < 0.0 {
        c.error("system.q", "quadrupole moment must be ≥ 0");
    }
    if cfg.field.b0 < 0.0 {
        c.error("field.B0", "B0 must be ≥ 0");
    }
    if cfg.field_axis().is_err() {
        c.error("field.orientation", "orientation must be a non-zero vector");
    }

    let st = &cfg.strain;
    let stack = matches!(st.mode, StrainMode::Stack100 | StrainMode::Stack111);
    let provided = [
        ("eps_par", st.eps_par.is_some(), stack),
        ("eps_perp", st.eps_perp.is_some(), stack),
        ("eps_long", st.eps_long.is_some(), st.mode == StrainMode::Uniaxial),
        ("eps_trans", st.eps_trans.is_some(), st.mode == StrainMode::Uniaxial),
        ("axis", st.axis.is_some(), st.mode == StrainMode::Uniaxial),
        ("components", st.components.is_some(), st.mode == StrainMode::Tensor),
    ];
    for (key, given, allowed) in provided {
        if given && !allowed {
            c.error(&format!("strain.{key}"), format!("`{key}` does not apply to strain mode {}", st.mode.name()));
        }
    }
    let required = match st.mode {
        StrainMode::Stack100 | StrainMode::Stack111 => Some(("eps_par", st.eps_par.is_some())),
        StrainMode::Uniaxial => Some(("eps_long", st.eps_long.is_some())),
        StrainMode::Tensor => Some(("components", st.components.is_some())),
        StrainMode::None => None,
    };
    let mut strain_ok = true;
    if let Some((key, false)) = required {
        c.error("strain.mode", format!("strain mode {} needs `{key}`", st.mode.name()));
        strain_ok = false;
    }
    if let Err(e) = st.stiffness.validate() {
        c.error("strain.C11", e.to_string());
        strain_ok = false;
    }
    if strain_ok {
        match cfg.coupling(&k) {
            Err(e) => c.error("strain.mode", e.to_string()),
            Ok(coupling) => {
                let f0 = cfg.larmor(&k);
                if coupling.f_q != 0.0 && perturbative_regime_violated(coupling.f_q, f0) {
                    c.warning(
                        "strain.mode",
                        format!(
                            "f_Q/f0 = {:.3} exceeds 0.3; perturbative shifts are unreliable, use exact diagonalization",
                            coupling.f_q / f0
                        ),
                    );
                }
            }
        }
    }

    for seq in &cfg.sequences {
        let key = format!("sequence {}", seq.name);
        check_events(&mut c, &key, &seq.events, cfg.system.spin);
    }

    if let Some(sw) = &cfg.sweep {
        let expected = match sw.variable.as_str() {
            "theta" => Some(Dimension::Angle),
            "strain" => Some(Dimension::Dimensionless),
            "B0" => Some(Dimension::Field),
            _ => None,
        };
        match expected {
            None => c.error(
                "sweep.variable",
                format!("unknown sweep variable `{}` (expected {})", sw.variable, SWEEP_VARIABLES.join(", ")),
            ),
            Some(d) if d != sw.dimension => c.error(
                "sweep.start",
                format!("sweep over {} needs {d} bounds, found {}", sw.variable, sw.dimension),
            ),
            Some(_) => {}
        }
        if sw.points < 2 {
            c.error("sweep.points", "a sweep needs at least 2 points");
        }
        if sw.variable == "strain" && st.mode == StrainMode::Tensor {
            c.error("sweep.variable", "strain sweeps need a stack or uniaxial strain mode");
        }
    }

    if let Err(e) = cfg.broadening.validate() {
        c.error("broadening.spread", e.to_string());
    }

    if let Some(n) = &cfg.noise {
        let pi2 = 2.0 * std::f64::consts::PI;
        if let Err(e) = NoiseModel::new(n.alpha, n.amplitude.unwrap_or(1.0), pi2 * n.f_low, pi2 * n.f_high) {
            c.error("noise.alpha", e.to_string());
        }
        if n.t2.is_none() && n.amplitude.is_none() {
            c.error("noise", "[noise] needs `t2` or `amplitude`");
        }
        if n.t2.is_some_and(|t| !(t > 0.0)) {
            c.error("noise.t2", "t2 must be positive");
        }
        if n.pulses.is_empty() || n.pulses.contains(&0) {
            c.error("noise.pulses", "pulse counts must be ≥ 1");
        }
        if n.points < 5 {
            c.error("noise.points", "decay curves need at least 5 points");
        }
        if resolve_transition(cfg.system.spin, &n.transition).is_err() {
            c.error("noise.transition", format!("unknown transition `{}`", n.transition));
        }
    }

    let e = &cfg.endor;
    match (e.rf_start, e.rf_stop) {
        (Some(a), Some(b)) if !(a < b) => c.error("endor.rf_stop", "rf_stop must exceed rf_start"),
        (Some(_), None) => c.error("endor.rf_start", "rf_start given without rf_stop"),
        (None, Some(_)) => c.error("endor.rf_stop", "rf_stop given without rf_start"),
        _ => {}
    }
    if !(e.rf_duration > 0.0) {
        c.error("endor.rf_duration", "rf pulse duration must be positive");
    }
    if e.points < 10 {
        c.error("endor.points", "spectra need at least 10 points");
    }
    if !(0.0..=1.0).contains(&e.efficiency) {
        c.error("endor.efficiency", "efficiency must lie in [0, 1]");
    }
    c.out
}
