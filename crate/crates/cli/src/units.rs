//! Strict SI quantity parsing: a number, an optional prefix and the unit
//! symbol, e.g. "160uS", "36nm", "0.5 V". Bare numbers are rejected.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// Returned in nanometres
    Length,
    Conductance,
    Current,
    Voltage,
    Time,
    Resistance,
}

impl Unit {
    fn symbols(self) -> &'static [&'static str] {
        match self {
            Unit::Length => &["m"],
            Unit::Conductance => &["S"],
            Unit::Current => &["A"],
            Unit::Voltage => &["V"],
            Unit::Time => &["s"],
            Unit::Resistance => &["ohm", "Ohm", "Ω"],
        }
    }

    /// Decimal exponent from SI to the returned unit.
    fn exponent(self) -> i32 {
        match self {
            Unit::Length => 9,
            _ => 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("'{0}': missing unit (expected e.g. {1})")]
    Unitless(String, &'static str),
    #[error("'{0}': expected a quantity in {1}")]
    WrongUnit(String, &'static str),
    #[error("'{0}': not a finite number")]
    BadNumber(String),
}

fn example(unit: Unit) -> &'static str {
    match unit {
        Unit::Length => "36nm",
        Unit::Conductance => "160uS",
        Unit::Current => "50uA",
        Unit::Voltage => "0.6V",
        Unit::Time => "80ns",
        Unit::Resistance => "10ohm",
    }
}

fn prefix(c: char) -> Option<i32> {
    Some(match c {
        'f' => -15,
        'p' => -12,
        'n' => -9,
        'u' | 'µ' | 'μ' => -6,
        'm' => -3,
        'k' => 3,
        'M' => 6,
        'G' => 9,
        _ => return None,
    })
}

// dividing by an exact power of ten keeps "36nm" at exactly 36
fn scaled(v: f64, e: i32) -> f64 {
    if e >= 0 {
        v * 10f64.powi(e)
    } else {
        v / 10f64.powi(-e)
    }
}

fn number(s: &str) -> Option<f64> {
    let s = s.trim_end();
    // f64::from_str also takes "inf", "nan" and friends
    let ok = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'))
        && s.chars().next().is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | '+' | '-'));
    ok.then(|| s.parse::<f64>().ok()).flatten().filter(|v| v.is_finite())
}

/// Parses `s` as a quantity of `unit`, returned in SI (lengths in nm).
pub fn parse_quantity(s: &str, unit: Unit) -> Result<f64, UnitError> {
    let t = s.trim();
    if number(t).is_some() {
        return Err(UnitError::Unitless(s.to_string(), example(unit)));
    }
    for sym in unit.symbols() {
        let Some(head) = t.strip_suffix(sym) else { continue };
        if let Some(v) = number(head) {
            return Ok(scaled(v, unit.exponent()));
        }
        let mut chars = head.chars();
        if let Some(p) = chars.next_back().and_then(prefix) {
            if let Some(v) = number(chars.as_str()) {
                return Ok(scaled(v, p + unit.exponent()));
            }
        }
        return Err(UnitError::BadNumber(s.to_string()));
    }
    Err(UnitError::WrongUnit(s.to_string(), example(unit)))
}

/// A cell dimension: absolute ("144nm") or a multiple of the minimum ("4x").
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extent {
    /// [nm]
    Absolute(f64),
    Multiple(f64),
}

impl Extent {
    pub fn parse(s: &str) -> Result<Self, UnitError> {
        let t = s.trim();
        if let Some(head) = t.strip_suffix('x') {
            return number(head)
                .filter(|v| *v > 0.0)
                .map(Extent::Multiple)
                .ok_or_else(|| UnitError::BadNumber(s.to_string()));
        }
        parse_quantity(t, Unit::Length).map(Extent::Absolute)
    }

    /// Resolved extent [nm] given the minimum pitch.
    pub fn resolve(self, min: f64) -> f64 {
        match self {
            Extent::Absolute(v) => v,
            Extent::Multiple(f) => f * min,
        }
    }
}

/// Supply policy: a fixed voltage or the middle of the execution window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Vdd {
    Mid,
    Fixed(f64),
}

impl Vdd {
    pub fn parse(s: &str) -> Result<Self, UnitError> {
        if s.trim() == "mid" {
            Ok(Vdd::Mid)
        } else {
            parse_quantity(s, Unit::Voltage).map(Vdd::Fixed)
        }
    }
}
