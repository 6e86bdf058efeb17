//! IPv4 prefix helpers shared by the census and passive pipelines.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid /24 subnet {0:?}")]
pub struct Slash24ParseError(pub String);

/// A /24 IPv4 prefix, stored with the host octet zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Slash24(Ipv4Addr);

impl Slash24 {
    /// The /24 containing `ip`.
    pub fn containing(ip: Ipv4Addr) -> Self {
        let o = ip.octets();
        Slash24(Ipv4Addr::new(o[0], o[1], o[2], 0))
    }

    /// Network address of the prefix (host octet zero).
    pub fn network(&self) -> Ipv4Addr {
        self.0
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        Self::containing(ip) == *self
    }

    /// Host `n` of this prefix (n = 0..=255).
    pub fn host(&self, n: u8) -> Ipv4Addr {
        let o = self.0.octets();
        Ipv4Addr::new(o[0], o[1], o[2], n)
    }
}

impl fmt::Display for Slash24 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.0)
    }
}

impl FromStr for Slash24 {
    type Err = Slash24ParseError;

    /// Accepts `a.b.c.0/24`, `a.b.c.d/24`, or a bare address; the host octet
    /// is zeroed either way.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let addr_part = s.strip_suffix("/24").unwrap_or(s);
        let ip: Ipv4Addr = addr_part
            .trim()
            .parse()
            .map_err(|_| Slash24ParseError(s.to_string()))?;
        Ok(Slash24::containing(ip))
    }
}

impl From<Slash24> for String {
    fn from(s: Slash24) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Slash24 {
    type Error = Slash24ParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_by_top_24_bits() {
        let a = Slash24::containing(Ipv4Addr::new(1, 2, 3, 4));
        let b = Slash24::containing(Ipv4Addr::new(1, 2, 3, 9));
        let c = Slash24::containing(Ipv4Addr::new(9, 8, 7, 6));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.network(), Ipv4Addr::new(1, 2, 3, 0));
    }

    #[test]
    fn parse_and_display_round_trip() {
        let s: Slash24 = "93.184.220.0/24".parse().unwrap();
        assert_eq!(s.to_string(), "93.184.220.0/24");
        let t: Slash24 = "93.184.220.17".parse().unwrap();
        assert_eq!(s, t);
        assert!("not-an-ip/24".parse::<Slash24>().is_err());
    }

    #[test]
    fn membership() {
        let s: Slash24 = "10.0.0.0/24".parse().unwrap();
        assert!(s.contains(Ipv4Addr::new(10, 0, 0, 255)));
        assert!(!s.contains(Ipv4Addr::new(10, 0, 1, 0)));
    }
}
