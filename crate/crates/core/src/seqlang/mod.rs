//! `.qsx` experiment descriptions: parsing, validation and canonical
//! serialization.
//!
//! ```text
//! [system]
//! spin = 3/2
//! g_n = 0.9558
//!
//! [field]
//! B0 = 350 mT
//! orientation = [1, 1, 1]
//!
//! [sequence cpmg]
//! pulse(inner, pi/2, 10 us, 0)
//! repeat 32 { wait(1 ms) pulse(inner, pi, 10us, 90 deg) wait(1 ms) }
//! ```

mod config;
mod lexer;
mod parser;
mod serializer;
pub mod units;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{
    EndorSection, ExperimentConfig, FieldSection, NoiseSection, OutputFormat, OutputSection, SourceMap,
    StrainMode, StrainSection, SweepSection, SystemSection, SWEEP_VARIABLES,
};
pub use serializer::serialize;
pub use validate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

/// A positioned message about the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
    pub message: String,
    /// Offending token text.
    pub token: String,
}

impl ParseDiagnostic {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {level}: {} (at `{}`)", self.line, self.column, self.message, self.token)
    }
}

/// Parses `text`, returning the configuration with every diagnostic found.
/// The configuration is only meaningful when no diagnostic is an error.
pub fn parse_with_diagnostics(text: &str) -> (ExperimentConfig, Vec<ParseDiagnostic>) {
    parser::Parser::new(text).run()
}

/// Parses `text`; fails with all diagnostics if any is an error.
pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<ParseDiagnostic>> {
    let (cfg, diags) = parse_with_diagnostics(text);
    if diags.iter().any(ParseDiagnostic::is_error) {
        Err(diags)
    } else {
        Ok(cfg)
    }
}

/// Parse followed by validation; errors from either stage fail.
pub fn load(text: &str) -> Result<(ExperimentConfig, Vec<ParseDiagnostic>), Vec<ParseDiagnostic>> {
    let cfg = parse(text)?;
    let diags = validate(&cfg);
    if diags.iter().any(ParseDiagnostic::is_error) {
        Err(diags)
    } else {
        Ok((cfg, diags))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PulseTarget, SequenceEvent};
    use crate::strain::Stack111Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const MINIMAL: &str = "[system]\n[field]\nB0 = 0.35 T\n";

    pub(crate) const SAMPLE_111: &str = r#"
# [111] sample, thermal-mismatch strain
[system]
spin = 3/2
g_n = 0.9558
q = 0.314 b

[field]
B0 = 0.35 T
orientation = [1, 1, 1]

[strain]
mode = stack-111
eps_par = -3.8e-4
stack111 = same-as-100

[tensor-S]
S11 = 1.5e22 V/m^2
S44 = 6.8e22 V/m^2
shear = tensor

[sequence cpmg]
pulse(inner, pi/2, 10 us, 0)
repeat 32 { wait(1 ms) pulse(inner, pi, 10us, 90 deg) wait(1 ms) }
pulse(inner, pi/2, 10 us, 0)

[sweep]
variable = theta
start = 0 deg
stop = 90 deg
points = 91

[broadening]
spread = 5 kHz
asymmetry = 0.5
shape = one-sided-exponential

[noise]
alpha = 1
t2 = 44 ms
pulses = [1, 2, 4, 8, 16, 32]

[endor]
rf_start = 2.35 MHz
rf_stop = 2.75 MHz
rf_duration = 400 us
points = 500

[output]
format = csv
prefix = "sample111"
"#;

    fn errors(text: &str) -> Vec<ParseDiagnostic> {
        parse(text).expect_err("should fail")
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.system.g_n, 0.9558);
        assert!(cfg.sweep.is_none() && cfg.noise.is_none());
        assert!(validate(&cfg).iter().all(|d| !d.is_error()));
    }

    #[test]
    fn repeat_block_structure() {
        let text = format!("{MINIMAL}[sequence cpmg]\nrepeat 32 {{ pulse(inner, pi, 10us, 0) wait(1ms) }}\n");
        let cfg = parse(&text).unwrap();
        let seq = &cfg.sequences[0];
        assert_eq!(seq.name, "cpmg");
        match &seq.events[..] {
            [SequenceEvent::Repeat { count: 32, body }] => {
                assert_eq!(body.len(), 2);
                match &body[0] {
                    SequenceEvent::Pulse(p) => {
                        assert_eq!(p.target, PulseTarget::Transition("inner".into()));
                        assert_eq!(p.flip, PI);
                        assert_eq!(p.duration, 10e-6);
                    }
                    e => panic!("{e:?}"),
                }
                assert_eq!(body[1], SequenceEvent::Wait { duration: 1e-3 });
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn field_units_normalize_identically() {
        let a = parse("[system]\n[field]\nB0 = 0.35 Tesla\n").unwrap();
        let b = parse("[system]\n[field]\nB0 = 350 mT\n").unwrap();
        assert_eq!(a.field.b0, b.field.b0);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_config_has_no_errors() {
        let cfg = parse(SAMPLE_111).unwrap();
        let diags = validate(&cfg);
        assert!(diags.is_empty(), "{diags:?}");
        assert_eq!(cfg.strain.stack111, Stack111Mode::SameAs100);
        assert_eq!(cfg.system.q, 3.14e-29);
        assert_eq!(cfg.endor.rf_duration, 400e-6);
        assert_eq!(cfg.sequences[0].events.len(), 3);
        assert_eq!(parse(&serialize(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn stack111_with_only_eps_par_is_accepted() {
        let text = format!("{MINIMAL}[strain]\nmode = stack-111\neps_par = -3.8e-4\n");
        let cfg = parse(&text).unwrap();
        assert!(validate(&cfg).iter().all(|d| !d.is_error()));
        let eps = cfg.strain_tensor().unwrap();
        assert!(eps.matrix().trace().abs() > 0.0);
    }

    #[test]
    fn undefined_sweep_variable() {
        let text = format!("{MINIMAL}[sweep]\nvariable = pressure\nstart = 0\nstop = 1\n");
        let cfg = parse(&text).unwrap();
        let diags: Vec<_> = validate(&cfg).into_iter().filter(|d| d.is_error()).collect();
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!((diags[0].line, diags[0].column), (5, 1));
    }

    #[test]
    fn strain_mode_mismatch() {
        let text = format!("{MINIMAL}[strain]\nmode = uniaxial\neps_par = 1e-4\n");
        let diags = validate(&parse(&text).unwrap());
        assert!(diags.iter().filter(|d| d.is_error()).count() >= 2, "{diags:?}");
    }

    #[test]
    fn strong_coupling_warns() {
        let text = "[system]\n[field]\nB0 = 1 mT\norientation = [1, 1, 1]\n[strain]\nmode = stack-111\neps_par = -3.8e-4\n";
        let diags = validate(&parse(text).unwrap());
        assert!(diags.iter().any(|d| d.severity == Severity::Warning && d.message.contains("0.3")));
        assert!(!diags.iter().any(ParseDiagnostic::is_error));
    }

    #[test]
    fn unresolvable_pulse_target() {
        let text = format!("{MINIMAL}[sequence s]\npulse(middle, pi, 1 us, 0)\n");
        let diags = validate(&parse(&text).unwrap());
        assert!(diags.iter().any(|d| d.is_error() && d.message.contains("middle")));
    }

    #[test]
    fn positioned_syntax_errors() {
        let d = errors("[system]\nspin = 3/2\ncolour = red\n[field]\nB0 = 0.35\n");
        assert_eq!(d.len(), 2, "{d:?}");
        assert_eq!((d[0].line, d[0].column), (3, 1));
        assert!(d[0].message.contains("unknown key"));
        assert_eq!((d[1].line, d[1].column), (5, 6));
        assert!(d[1].message.contains("missing unit"));

        let d = errors("[system]\n[field]\nB0 = 3 Hz\n");
        assert!(d[0].message.contains("unit mismatch"));

        let d = errors("[system]\n[system]\n[field]\nB0 = 1 T\n");
        assert!(d[0].message.contains("duplicate section"));
        assert_eq!(d[0].line, 2);

        let d = errors("[system]\n[field]\nB0 = 1 T\n[sequence s]\nrepeat 3 {\npulse(inner, pi, 1 us, 0)\n");
        assert!(d.iter().any(|x| x.message.contains("unclosed") && x.line == 5 && x.column == 1), "{d:?}");

        let d = errors("B0 = 1 T\n[system]\n[field]\nB0 = 2 furlong\n");
        assert_eq!(d.len(), 2);
        assert!(d[1].message.contains("unknown unit"));
    }

    #[test]
    fn multiple_errors_collected() {
        let d = errors("[system]\ng_n = abc\nspin = 7/3\n[field]\nB0 = 1 T\n[sequence s]\nwait()\npulse(inner, pi)\nrepeat x { }\n");
        assert!(d.len() >= 5, "{d:?}");
    }

    #[test]
    fn missing_sections_reported() {
        let d = errors("");
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|x| x.line == 1 && x.column == 1));
    }

    /// Random single-edit mutations of a valid config.
    fn mutate(text: &str, rng: &mut ChaCha8Rng) -> String {
        let mut chars: Vec<char> = text.chars().collect();
        let pool = ['[', ']', '{', '}', '(', ')', '=', ',', '#', '"', 'x', '1', '.', '-', ' ', '\n', 'e'];
        let edits = rng.random_range(1..=3);
        for _ in 0..edits {
            let k = rng.random_range(0..chars.len());
            match rng.random_range(0..4) {
                0 => {
                    chars.remove(k);
                }
                1 => chars.insert(k, pool[rng.random_range(0..pool.len())]),
                2 => chars[k] = pool[rng.random_range(0..pool.len())],
                _ => {
                    let lines: Vec<String> = chars.iter().collect::<String>().lines().map(String::from).collect();
                    let a = rng.random_range(0..lines.len());
                    let mut lines = lines;
                    let dup = lines[a].clone();
                    lines.insert(rng.random_range(0..=lines.len()), dup);
                    chars = lines.join("\n").chars().collect();
                }
            }
        }
        chars.into_iter().collect()
    }

    fn position_valid(text: &str, d: &ParseDiagnostic) -> bool {
        let lines: Vec<&str> = text.split('\n').collect();
        d.line >= 1
            && d.line <= lines.len()
            && d.column >= 1
            && d.column <= lines[d.line - 1].trim_end_matches('\r').chars().count() + 1
    }

    #[test]
    fn fuzzed_configs_round_trip_or_diagnose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut accepted = 0;
        for _ in 0..100 {
            let text = mutate(SAMPLE_111, &mut rng);
            match parse(&text) {
                Ok(cfg) => {
                    accepted += 1;
                    let canon = serialize(&cfg);
                    let again = parse(&canon).unwrap_or_else(|d| panic!("{canon}\n{d:?}"));
                    assert_eq!(again, cfg);
                    assert_eq!(serialize(&again), canon);
                }
                Err(diags) => {
                    assert!(!diags.is_empty());
                    for d in &diags {
                        assert!(position_valid(&text, d), "{d:?} in\n{text}");
                    }
                }
            }
        }
        assert!(accepted > 0 && accepted < 100, "{accepted}");
    }
}
