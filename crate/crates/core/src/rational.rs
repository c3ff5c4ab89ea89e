//! Exact rational values used for tensor quanta and objective scores.

use std::fmt;

use num_rational::Ratio;
use num_traits::{CheckedMul, Signed, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

/// Quantum (step size) or zero point of a quantized tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quantum(pub Ratio<i64>);

impl Quantum {
    pub fn new(numer: i64, denom: i64) -> Self {
        Quantum(Ratio::new(numer, denom))
    }

    pub fn zero() -> Self {
        Quantum(Ratio::zero())
    }

    pub fn integer(v: i64) -> Self {
        Quantum(Ratio::from_integer(v))
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn checked_mul(&self, other: &Quantum) -> Option<Quantum> {
        self.0.checked_mul(&other.0).map(Quantum)
    }

    pub fn to_i128(&self) -> Ratio<i128> {
        Ratio::new(i128::from(*self.0.numer()), i128::from(*self.0.denom()))
    }

    pub fn to_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for Quantum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// Error from [`parse_rational`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational `{0}`")]
pub struct ParseRationalError(pub String);

/// Parses `"n"`, `"n/d"` or a finite decimal such as `"0.125"` exactly.
pub fn parse_rational(text: &str) -> Result<Ratio<i64>, ParseRationalError> {
    let err = || ParseRationalError(text.to_string());
    let t = text.trim();
    if let Some((n, d)) = t.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| err())?;
        let d: i64 = d.trim().parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        return Ok(Ratio::new(n, d));
    }
    if t.contains(['e', 'E']) {
        return Err(err());
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let numer: i64 = digits.parse().map_err(|_| err())?;
    let denom = 10i64.checked_pow(frac_part.len() as u32).ok_or_else(err)?;
    let numer = if neg { -numer } else { numer };
    Ok(Ratio::new(numer, denom))
}

impl Serialize for Quantum {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Quantum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Quantum;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a rational as \"n/d\", a decimal string, or an integer")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Quantum, E> {
                parse_rational(v).map(Quantum).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Quantum, E> {
                Ok(Quantum::integer(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Quantum, E> {
                i64::try_from(v).map(Quantum::integer).map_err(|_| E::custom("integer out of range"))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Quantum, E> {
                // Shortest round-trip repr, then parse that decimal exactly.
                parse_rational(&format!("{v}")).map(Quantum).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Exact objective score.
pub type Score = Ratio<i128>;

pub(crate) mod score_serde {
    use super::Score;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Score, s: S) -> Result<S::Ok, S::Error> {
        if *v.denom() == 1 {
            s.serialize_str(&v.numer().to_string())
        } else {
            s.serialize_str(&format!("{}/{}", v.numer(), v.denom()))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Score, D::Error> {
        let text = String::deserialize(d)?;
        let bad = || serde::de::Error::custom(format!("invalid score `{text}`"));
        match text.split_once('/') {
            Some((n, den)) => {
                let n: i128 = n.parse().map_err(|_| bad())?;
                let den: i128 = den.parse().map_err(|_| bad())?;
                if den == 0 {
                    return Err(bad());
                }
                Ok(Score::new(n, den))
            }
            None => text.parse::<i128>().map(Score::from_integer).map_err(|_| bad()),
        }
    }
}
