use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DIGITS: &str = "0123456789";
pub const ALPHANUMERIC: &str = "0123456789abcdefghijklmnopqrstuvwxyz";

/// Ordered symbol alphabet. A symbol's class index is its position.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Charset {
    symbols: Vec<char>,
}

impl Charset {
    pub fn new(symbols: &str) -> Result<Self> {
        let symbols: Vec<char> = symbols.chars().collect();
        if symbols.len() < 2 {
            return Err(Error::Validation(format!(
                "charset needs at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::Validation(format!("charset repeats symbol {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn digits() -> Self {
        Self::new(DIGITS).expect("valid charset")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of(c).is_some()
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }
}

impl Default for Charset {
    fn default() -> Self {
        Self::new(ALPHANUMERIC).expect("valid charset")
    }
}

impl fmt::Debug for Charset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Charset({:?})", self.as_string())
    }
}

impl fmt::Display for Charset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

impl Serialize for Charset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for Charset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Charset::new(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let cs = Charset::default();
        assert_eq!(cs.len(), 36);
        assert_eq!(cs.index_of('0'), Some(0));
        assert_eq!(cs.index_of('a'), Some(10));
        assert_eq!(cs.index_of('z'), Some(35));
        assert_eq!(cs.index_of('A'), None);
    }

    #[test]
    fn rejects_duplicates_and_tiny_sets() {
        assert!(Charset::new("abca").is_err());
        assert!(Charset::new("a").is_err());
        assert!(Charset::new("").is_err());
    }

    #[test]
    fn serde_as_string() {
        let cs = Charset::digits();
        let json = serde_json::to_string(&cs).unwrap();
        assert_eq!(json, "\"0123456789\"");
        assert_eq!(serde_json::from_str::<Charset>(&json).unwrap(), cs);
        assert!(serde_json::from_str::<Charset>("\"aa\"").is_err());
    }
}
