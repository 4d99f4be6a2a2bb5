//! Exact money arithmetic.
//!
//! Amounts are integer pico-USD (1e-12 USD). Catalog prices are quoted per
//! million tokens with at most six decimals, which makes every per-token
//! price a whole number of pico-USD and keeps all cost sums exact.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const PICO_DIGITS: usize = 12;
const PICO_PER_USD: u128 = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(u128);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub const fn from_pico(pico: u128) -> Self {
        Usd(pico)
    }

    pub const fn pico(self) -> u128 {
        self.0
    }

    pub fn from_micro(micro: u64) -> Self {
        Usd(micro as u128 * 1_000_000)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Integer division in pico-USD, rounding down. Used for averaging.
    pub fn div_floor(self, by: u64) -> Usd {
        if by == 0 {
            return self;
        }
        Usd(self.0 / by as u128)
    }

    /// Lossy ratio, for normalized reports only.
    pub fn ratio(self, other: Usd) -> f64 {
        if other.0 == 0 {
            if self.0 == 0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.0 as f64 / other.0 as f64
        }
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / PICO_PER_USD as f64
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / PICO_PER_USD;
        let frac = self.0 % PICO_PER_USD;
        if frac == 0 {
            return write!(f, "{whole}");
        }
        let digits = format!("{frac:0width$}", width = PICO_DIGITS);
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid USD amount {0:?}")]
pub struct ParseUsdError(String);

impl FromStr for Usd {
    type Err = ParseUsdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseUsdError(s.to_string());
        let t = s.trim().trim_start_matches('$');
        let (whole, frac) = match t.split_once('.') {
            Some((w, f)) => (w, f),
            None => (t, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit())
        {
            return Err(err());
        }
        if frac.len() > PICO_DIGITS {
            return Err(err());
        }
        let whole: u128 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| err())?
        };
        let frac_val: u128 = if frac.is_empty() {
            0
        } else {
            frac.parse::<u128>().map_err(|_| err())? * 10u128.pow((PICO_DIGITS - frac.len()) as u32)
        };
        whole
            .checked_mul(PICO_PER_USD)
            .and_then(|w| w.checked_add(frac_val))
            .map(Usd)
            .ok_or_else(err)
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Price per token, held as pico-USD per token (equivalently micro-USD per
/// million tokens).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenPrice(u128);

impl TokenPrice {
    pub const fn from_pico_per_token(p: u128) -> Self {
        TokenPrice(p)
    }

    /// Parses a price quoted in USD per million tokens, e.g. `"0.15"`.
    /// At most six decimals are accepted so that the per-token price is exact.
    pub fn per_million(s: &str) -> Result<Self, ParseUsdError> {
        let usd: Usd = s.parse()?;
        if !usd.pico().is_multiple_of(1_000_000) {
            return Err(ParseUsdError(s.to_string()));
        }
        Ok(TokenPrice(usd.pico() / 1_000_000))
    }

    pub fn per_million_usd(self) -> Usd {
        Usd(self.0 * 1_000_000)
    }

    pub fn times(self, tokens: u64) -> Usd {
        Usd(self.0 * tokens as u128)
    }
}

impl Serialize for TokenPrice {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenPrice {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TokenPrice::per_million(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for TokenPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.per_million_usd().fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_trims_trailing_zeros() {
        assert_eq!(Usd::from_pico(750_000_000).to_string(), "0.00075");
        assert_eq!(Usd::from_pico(75 * PICO_PER_USD).to_string(), "75");
        assert_eq!(Usd::ZERO.to_string(), "0");
    }

    #[test]
    fn parse_accepts_dollar_sign_and_bare_fraction() {
        assert_eq!("$0.2".parse::<Usd>().unwrap(), Usd::from_pico(200_000_000_000));
        assert_eq!(".5".parse::<Usd>().unwrap(), Usd::from_pico(500_000_000_000));
        assert!("1.0000000000001".parse::<Usd>().is_err());
        assert!("abc".parse::<Usd>().is_err());
        assert!("".parse::<Usd>().is_err());
        assert!("-1".parse::<Usd>().is_err());
    }

    #[test]
    fn per_million_price_must_be_whole_pico_per_token() {
        let p = TokenPrice::per_million("0.15").unwrap();
        assert_eq!(p.times(1), Usd::from_pico(150_000));
        assert!(TokenPrice::per_million("0.0000001").is_err());
    }

    proptest::proptest! {
        #[test]
        fn display_parse_round_trip(pico in 0u128..u64::MAX as u128 * 1000) {
            let usd = Usd::from_pico(pico);
            proptest::prop_assert_eq!(usd.to_string().parse::<Usd>().unwrap(), usd);
        }
    }
}
