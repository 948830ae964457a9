//! Decimal numbers in scenario files.
//!
//! Numeric fields are written as decimal strings (`"0.125"`) so that a
//! scenario reads the same under every locale; plain JSON numbers are
//! accepted too.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Decimal(pub f64);

impl Decimal {
    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<f64> for Decimal {
    fn from(x: f64) -> Self {
        Decimal(x)
    }
}

impl FromStr for Decimal {
    type Err = String;

    /// Accepts an optional sign, digits with at most one `.`, and an optional
    /// exponent. Rejects `inf`, `nan`, thousands separators and decimal
    /// commas.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let valid = !t.is_empty()
            && t.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
            && t.chars().any(|c| c.is_ascii_digit());
        if !valid {
            return Err(format!("`{s}` is not a decimal number"));
        }
        match t.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Decimal(x)),
            Ok(_) => Err(format!("`{s}` is out of range")),
            Err(_) => Err(format!("`{s}` is not a decimal number")),
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

struct DecimalVisitor;

impl Visitor<'_> for DecimalVisitor {
    type Value = Decimal;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a decimal string such as \"0.125\" or a number")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Decimal, E> {
        v.parse().map_err(E::custom)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Decimal, E> {
        Ok(Decimal(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Decimal, E> {
        Ok(Decimal(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Decimal, E> {
        Ok(Decimal(v as f64))
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(DecimalVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_decimals() {
        assert_eq!("0.125".parse::<Decimal>().unwrap().get(), 0.125);
        assert_eq!(" -1e-3 ".parse::<Decimal>().unwrap().get(), -1e-3);
        assert_eq!("+2".parse::<Decimal>().unwrap().get(), 2.0);
    }

    #[test]
    fn rejects_locale_and_special_forms() {
        for bad in ["0,125", "1 000", "inf", "NaN", "", ".", "1e999", "0x10"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad}");
        }
    }

    #[test]
    fn json_forms() {
        let a: Vec<Decimal> = serde_json::from_str(r#"["0.1", 0.1, 3]"#).unwrap();
        assert_eq!(a, vec![Decimal(0.1), Decimal(0.1), Decimal(3.0)]);
        assert_eq!(serde_json::to_string(&Decimal(0.1)).unwrap(), r#""0.1""#);
        assert!(serde_json::from_str::<Decimal>("true").is_err());
    }
}
