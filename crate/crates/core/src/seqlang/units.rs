//! Unit normalization for `.qsx` values. Every accepted unit maps to the
//! canonical SI unit of its dimension; anything else is rejected.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Frequency,
    Time,
    Field,
    Efg,
    Area,
    Pressure,
    Angle,
    Dimensionless,
}

impl Dimension {
    /// Canonical unit written by the serializer (empty for pure numbers).
    pub fn canonical(self) -> &'static str {
        match self {
            Dimension::Frequency => "Hz",
            Dimension::Time => "s",
            Dimension::Field => "T",
            Dimension::Efg => "V/m^2",
            Dimension::Area => "m^2",
            Dimension::Pressure => "Pa",
            Dimension::Angle => "rad",
            Dimension::Dimensionless => "",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Frequency => "frequency",
            Dimension::Time => "time",
            Dimension::Field => "magnetic field",
            Dimension::Efg => "field gradient",
            Dimension::Area => "area",
            Dimension::Pressure => "pressure",
            Dimension::Angle => "angle",
            Dimension::Dimensionless => "dimensionless",
        };
        f.write_str(name)
    }
}

/// How a unit converts to SI.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// Multiply by `10^k`; applied on the decimal literal so the result is
    /// correctly rounded.
    Decade(i32),
    Degrees,
}

/// `(alias, dimension, scale)`.
const UNITS: &[(&str, Dimension, Scale)] = &[
    ("Hz", Dimension::Frequency, Scale::Decade(0)),
    ("kHz", Dimension::Frequency, Scale::Decade(3)),
    ("MHz", Dimension::Frequency, Scale::Decade(6)),
    ("GHz", Dimension::Frequency, Scale::Decade(9)),
    ("s", Dimension::Time, Scale::Decade(0)),
    ("ms", Dimension::Time, Scale::Decade(-3)),
    ("us", Dimension::Time, Scale::Decade(-6)),
    ("µs", Dimension::Time, Scale::Decade(-6)),
    ("μs", Dimension::Time, Scale::Decade(-6)),
    ("ns", Dimension::Time, Scale::Decade(-9)),
    ("T", Dimension::Field, Scale::Decade(0)),
    ("Tesla", Dimension::Field, Scale::Decade(0)),
    ("mT", Dimension::Field, Scale::Decade(-3)),
    ("uT", Dimension::Field, Scale::Decade(-6)),
    ("µT", Dimension::Field, Scale::Decade(-6)),
    ("G", Dimension::Field, Scale::Decade(-4)),
    ("Gauss", Dimension::Field, Scale::Decade(-4)),
    ("V/m^2", Dimension::Efg, Scale::Decade(0)),
    ("V/m2", Dimension::Efg, Scale::Decade(0)),
    ("V/m²", Dimension::Efg, Scale::Decade(0)),
    ("m^2", Dimension::Area, Scale::Decade(0)),
    ("m2", Dimension::Area, Scale::Decade(0)),
    ("m²", Dimension::Area, Scale::Decade(0)),
    ("fm^2", Dimension::Area, Scale::Decade(-30)),
    ("b", Dimension::Area, Scale::Decade(-28)),
    ("barn", Dimension::Area, Scale::Decade(-28)),
    ("mb", Dimension::Area, Scale::Decade(-31)),
    ("Pa", Dimension::Pressure, Scale::Decade(0)),
    ("kPa", Dimension::Pressure, Scale::Decade(3)),
    ("MPa", Dimension::Pressure, Scale::Decade(6)),
    ("GPa", Dimension::Pressure, Scale::Decade(9)),
    ("rad", Dimension::Angle, Scale::Decade(0)),
    ("mrad", Dimension::Angle, Scale::Decade(-3)),
    ("deg", Dimension::Angle, Scale::Degrees),
    ("°", Dimension::Angle, Scale::Degrees),
];

/// Accepted unit spellings for a dimension, for diagnostics and docs.
pub fn aliases(dim: Dimension) -> Vec<&'static str> {
    UNITS.iter().filter(|u| u.1 == dim).map(|u| u.0).collect()
}

pub fn dimension_of(unit: &str) -> Option<Dimension> {
    UNITS.iter().find(|u| u.0 == unit).map(|u| u.1)
}

/// Parses a decimal literal, rejecting `inf`, `nan` and other spellings
/// Rust would otherwise accept.
pub fn parse_number(literal: &str) -> Option<f64> {
    let body = literal.strip_prefix(['+', '-']).unwrap_or(literal);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(k) => (&body[..k], Some(&body[k + 1..])),
        None => (body, None),
    };
    let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
    let dots = mantissa.chars().filter(|&c| c == '.').count();
    if digits == 0 || dots > 1 || !mantissa.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    if let Some(e) = exponent {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        if e.is_empty() || !e.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
    }
    literal.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Splits a literal such as `-3.5e2` into mantissa and exponent, shifts the
/// exponent by `k` and re-parses, so `350 mT` and `0.35 T` give the same bits.
fn scale_decimal(literal: &str, k: i32) -> Option<f64> {
    parse_number(literal)?;
    if k == 0 {
        return parse_number(literal);
    }
    let (mantissa, exponent) = match literal.find(['e', 'E']) {
        Some(i) => (&literal[..i], literal[i + 1..].parse::<i32>().ok()?),
        None => (literal, 0),
    };
    format!("{mantissa}e{}", exponent.checked_add(k)?)
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
}

/// Converts `literal unit` to SI. `None` unit means a bare number.
pub fn to_si(literal: &str, unit: Option<&str>) -> Result<(f64, Dimension), String> {
    let Some(unit) = unit else {
        return parse_number(literal)
            .map(|v| (v, Dimension::Dimensionless))
            .ok_or_else(|| format!("`{literal}` is not a number"));
    };
    let &(_, dim, scale) = UNITS
        .iter()
        .find(|u| u.0 == unit)
        .ok_or_else(|| format!("unknown unit `{unit}`"))?;
    let value = match scale {
        Scale::Decade(k) => scale_decimal(literal, k),
        Scale::Degrees => parse_number(literal).map(f64::to_radians),
    }
    .ok_or_else(|| format!("`{literal}` is not a number"))?;
    Ok((value, dim))
}

/// Shortest round-trip text for `v`, switching to exponent form outside a
/// comfortable range.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}
