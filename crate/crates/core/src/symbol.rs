//! The seven-symbol Reber alphabet and timestamped step labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    B,
    T,
    P,
    S,
    X,
    V,
    E,
}

impl Symbol {
    pub const COUNT: usize = 7;

    /// Alphabet in index order.
    pub const ALL: [Symbol; Symbol::COUNT] = [
        Symbol::B,
        Symbol::T,
        Symbol::P,
        Symbol::S,
        Symbol::X,
        Symbol::V,
        Symbol::E,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Symbol> {
        Symbol::ALL.get(index).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::B => 'B',
            Symbol::T => 'T',
            Symbol::P => 'P',
            Symbol::S => 'S',
            Symbol::X => 'X',
            Symbol::V => 'V',
            Symbol::E => 'E',
        }
    }

    pub fn from_char(c: char) -> Result<Symbol> {
        Ok(match c {
            'B' => Symbol::B,
            'T' => Symbol::T,
            'P' => Symbol::P,
            'S' => Symbol::S,
            'X' => Symbol::X,
            'V' => Symbol::V,
            'E' => Symbol::E,
            other => return Err(Error::UnknownSymbol(other)),
        })
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Symbol::from_char(c).map_err(serde::de::Error::custom),
            _ => Err(serde::de::Error::custom(format!("bad symbol {s:?}"))),
        }
    }
}

/// Parses a contiguous symbol string such as `BTXSE`.
pub fn parse_symbols(s: &str) -> Result<Vec<Symbol>> {
    s.chars().map(Symbol::from_char).collect()
}

pub fn symbols_to_string(symbols: &[Symbol]) -> String {
    symbols.iter().map(|s| s.as_char()).collect()
}

/// A symbol tagged with its time index inside the sequence, e.g. `T1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StepLabel {
    pub symbol: Symbol,
    pub time: usize,
}

impl StepLabel {
    pub fn new(symbol: Symbol, time: usize) -> Self {
        StepLabel { symbol, time }
    }
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.symbol, self.time)
    }
}

impl FromStr for StepLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidLabel(s.to_owned());
        let mut chars = s.chars();
        let symbol = chars.next().ok_or_else(bad)?;
        let symbol = Symbol::from_char(symbol).map_err(|_| bad())?;
        let time = chars.as_str().parse().map_err(|_| bad())?;
        Ok(StepLabel { symbol, time })
    }
}

impl Serialize for StepLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StepLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
