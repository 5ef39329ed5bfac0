//! Canonical `.qsx` writer: every section in a fixed order, SI units, and
//! shortest round-trip numbers.

use std::fmt::Write;

use super::config::{
    ExperimentConfig, OutputFormat, BROADENING_SHAPES, SHEAR_CONVENTIONS, STACK111_MODES,
};
use super::units::{format_number, Dimension};
use crate::dynamics::{PulseTarget, SequenceEvent};

fn q(v: f64, dim: Dimension) -> String {
    let unit = dim.canonical();
    if unit.is_empty() {
        format_number(v)
    } else {
        format!("{} {unit}", format_number(v))
    }
}

fn list(values: impl IntoIterator<Item = String>) -> String {
    format!("[{}]", values.into_iter().collect::<Vec<_>>().join(", "))
}

fn name_of<T: PartialEq + Copy>(table: &[(&'static str, T)], v: T) -> &'static str {
    table.iter().find(|e| e.1 == v).expect("value listed in its name table").0
}

fn events(out: &mut String, events: &[SequenceEvent], indent: usize) {
    let pad = "    ".repeat(indent);
    for e in events {
        match e {
            SequenceEvent::Pulse(p) => {
                let target = match &p.target {
                    PulseTarget::Transition(name) => name.as_str(),
                    PulseTarget::NonSelective => "all",
                };
                let _ = writeln!(
                    out,
                    "{pad}pulse({target}, {}, {}, {})",
                    q(p.flip, Dimension::Angle),
                    q(p.duration, Dimension::Time),
                    q(p.phase, Dimension::Angle)
                );
            }
            SequenceEvent::Wait { duration } => {
                let _ = writeln!(out, "{pad}wait({})", q(*duration, Dimension::Time));
            }
            SequenceEvent::Repeat { count, body } => {
                let _ = writeln!(out, "{pad}repeat {count} {{");
                self::events(out, body, indent + 1);
                let _ = writeln!(out, "{pad}}}");
            }
        }
    }
}

/// Canonical text for `cfg`; `parse(serialize(cfg)) == cfg`.
pub fn serialize(cfg: &ExperimentConfig) -> String {
    let mut o = String::new();
    let s = &cfg.system;
    let spin = if s.spin.doubled().is_multiple_of(2) {
        format!("{}", s.spin.doubled() / 2)
    } else {
        format!("{}/2", s.spin.doubled())
    };
    let _ = writeln!(o, "[system]");
    let _ = writeln!(o, "spin = {spin}");
    let _ = writeln!(o, "g_n = {}", format_number(s.g_n));
    let _ = writeln!(o, "g_n_free = {}", format_number(s.g_n_free));
    let _ = writeln!(o, "q = {}", q(s.q, Dimension::Area));

    let _ = writeln!(o, "\n[field]");
    let _ = writeln!(o, "B0 = {}", q(cfg.field.b0, Dimension::Field));
    let _ = writeln!(o, "orientation = {}", list(cfg.field.orientation.iter().map(|v| format_number(*v))));

    let st = &cfg.strain;
    let _ = writeln!(o, "\n[strain]");
    let _ = writeln!(o, "mode = {}", st.mode.name());
    for (key, v) in [
        ("eps_par", st.eps_par),
        ("eps_perp", st.eps_perp),
        ("eps_long", st.eps_long),
        ("eps_trans", st.eps_trans),
    ] {
        if let Some(v) = v {
            let _ = writeln!(o, "{key} = {}", format_number(v));
        }
    }
    let _ = writeln!(o, "stack111 = {}", name_of(&STACK111_MODES, st.stack111));
    if let Some(a) = st.axis {
        let _ = writeln!(o, "axis = {}", list(a.iter().map(|v| format_number(*v))));
    }
    if let Some(c) = st.components {
        let _ = writeln!(o, "components = {}", list(c.iter().map(|v| format_number(*v))));
    }
    let _ = writeln!(o, "C11 = {}", q(st.stiffness.c11, Dimension::Pressure));
    let _ = writeln!(o, "C12 = {}", q(st.stiffness.c12, Dimension::Pressure));
    let _ = writeln!(o, "C44 = {}", q(st.stiffness.c44, Dimension::Pressure));

    let _ = writeln!(o, "\n[tensor-S]");
    let _ = writeln!(o, "S11 = {}", q(cfg.tensor_s.s11, Dimension::Efg));
    let _ = writeln!(o, "S44 = {}", q(cfg.tensor_s.s44, Dimension::Efg));
    let _ = writeln!(o, "shear = {}", name_of(&SHEAR_CONVENTIONS, cfg.tensor_s.shear));

    for seq in &cfg.sequences {
        let _ = writeln!(o, "\n[sequence {}]", seq.name);
        events(&mut o, &seq.events, 0);
    }

    if let Some(sw) = &cfg.sweep {
        let _ = writeln!(o, "\n[sweep]");
        let _ = writeln!(o, "variable = {}", sw.variable);
        let _ = writeln!(o, "start = {}", q(sw.start, sw.dimension));
        let _ = writeln!(o, "stop = {}", q(sw.stop, sw.dimension));
        let _ = writeln!(o, "points = {}", sw.points);
    }

    let b = &cfg.broadening;
    let _ = writeln!(o, "\n[broadening]");
    let _ = writeln!(o, "spread = {}", q(b.spread, Dimension::Frequency));
    let _ = writeln!(o, "asymmetry = {}", format_number(b.asymmetry));
    let _ = writeln!(o, "shape = {}", name_of(&BROADENING_SHAPES, b.shape));
    let _ = writeln!(o, "nodes = {}", b.nodes);

    if let Some(n) = &cfg.noise {
        let _ = writeln!(o, "\n[noise]");
        let _ = writeln!(o, "alpha = {}", format_number(n.alpha));
        if let Some(t2) = n.t2 {
            let _ = writeln!(o, "t2 = {}", q(t2, Dimension::Time));
        }
        if let Some(a) = n.amplitude {
            let _ = writeln!(o, "amplitude = {}", format_number(a));
        }
        let _ = writeln!(o, "f_low = {}", q(n.f_low, Dimension::Frequency));
        let _ = writeln!(o, "f_high = {}", q(n.f_high, Dimension::Frequency));
        let _ = writeln!(o, "pulses = {}", list(n.pulses.iter().map(u32::to_string)));
        let _ = writeln!(o, "points = {}", n.points);
        let _ = writeln!(o, "transition = {}", n.transition);
    }

    let e = &cfg.endor;
    let _ = writeln!(o, "\n[endor]");
    if let Some(v) = e.rf_start {
        let _ = writeln!(o, "rf_start = {}", q(v, Dimension::Frequency));
    }
    if let Some(v) = e.rf_stop {
        let _ = writeln!(o, "rf_stop = {}", q(v, Dimension::Frequency));
    }
    let _ = writeln!(o, "rf_duration = {}", q(e.rf_duration, Dimension::Time));
    let _ = writeln!(o, "points = {}", e.points);
    let _ = writeln!(o, "efficiency = {}", format_number(e.efficiency));

    let _ = writeln!(o, "\n[output]");
    let format = match cfg.output.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let _ = writeln!(o, "format = {format}");
    let _ = writeln!(o, "prefix = \"{}\"", cfg.output.prefix);
    o
}
