//! Minimal reader for `pragma solidity` version constraints.
//!
//! Supports the range syntax that appears in real contract sources: caret,
//! tilde, comparison operators, bare (exact) versions, partial versions like
//! `0.4`, `*`/`x` wildcards, whitespace conjunction and `||` disjunction.
//! Everything is evaluated as half-open version intervals.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PragmaError {
    #[error("malformed version constraint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Version {
            major,
            minor,
            patch,
        }
    }

    /// Smallest version strictly greater than `self`.
    fn succ(self) -> Version {
        Version::new(self.major, self.minor, self.patch + 1)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

/// Parses a concrete `a.b.c` version (used for configured floors).
pub fn parse_version(text: &str) -> Result<Version, PragmaError> {
    let mut parts = [0u64; 3];
    let split: Vec<&str> = text.trim().split('.').collect();
    if split.is_empty() || split.len() > 3 {
        return Err(PragmaError::Malformed(text.to_string()));
    }
    for (i, piece) in split.iter().enumerate() {
        parts[i] = piece
            .parse()
            .map_err(|_| PragmaError::Malformed(text.to_string()))?;
    }
    Ok(Version::new(parts[0], parts[1], parts[2]))
}

/// Version with trailing components possibly unspecified (`0.4` or `0.4.x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Partial {
    major: Option<u64>,
    minor: Option<u64>,
    patch: Option<u64>,
}

impl Partial {
    fn floor(self) -> Version {
        Version::new(
            self.major.unwrap_or(0),
            self.minor.unwrap_or(0),
            self.patch.unwrap_or(0),
        )
    }

    /// Exclusive upper bound of the block of versions matching the specified
    /// components exactly; `None` when nothing is specified (`*` alone).
    fn block_end(self) -> Option<Version> {
        match (self.major, self.minor, self.patch) {
            (Some(ma), Some(mi), Some(pa)) => Some(Version::new(ma, mi, pa).succ()),
            (Some(ma), Some(mi), None) => Some(Version::new(ma, mi + 1, 0)),
            (Some(ma), None, _) => Some(Version::new(ma + 1, 0, 0)),
            (None, _, _) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Exact,
    Caret,
    Tilde,
    Ge,
    Gt,
    Le,
    Lt,
}

/// Half-open interval `[lo, hi)`; `hi = None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Interval {
    lo: Version,
    hi: Option<Version>,
}

impl Interval {
    fn all() -> Interval {
        Interval {
            lo: Version::new(0, 0, 0),
            hi: None,
        }
    }

    fn is_empty(&self) -> bool {
        self.hi.is_some_and(|hi| hi <= self.lo)
    }

    fn intersect(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.max(other.lo),
            hi: match (self.hi, other.hi) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        }
    }
}

fn term_interval(op: Op, p: Partial) -> Interval {
    let lo = p.floor();
    match op {
        Op::Exact => Interval {
            lo,
            hi: p.block_end(),
        },
        Op::Caret => {
            let hi = match (p.major, p.minor, p.patch) {
                (Some(0), Some(0), Some(pa)) => Some(Version::new(0, 0, pa + 1)),
                (Some(0), Some(mi), _) => Some(Version::new(0, mi + 1, 0)),
                (Some(ma), _, _) => Some(Version::new(ma + 1, 0, 0)),
                (None, _, _) => None,
            };
            Interval { lo, hi }
        }
        Op::Tilde => {
            let hi = match (p.major, p.minor) {
                (Some(ma), Some(mi)) => Some(Version::new(ma, mi + 1, 0)),
                (Some(ma), None) => Some(Version::new(ma + 1, 0, 0)),
                (None, _) => None,
            };
            Interval { lo, hi }
        }
        Op::Ge => Interval { lo, hi: None },
        // `> 0.4` admits nothing inside the 0.4 block, so it starts at the
        // block's end; `> 0.4.2` starts at the successor.
        Op::Gt => Interval {
            lo: p.block_end().unwrap_or_else(|| Version::new(0, 0, 0)),
            hi: if p.major.is_none() {
                Some(Version::new(0, 0, 0))
            } else {
                None
            },
        },
        Op::Le => Interval {
            lo: Version::new(0, 0, 0),
            hi: p.block_end(),
        },
        Op::Lt => Interval {
            lo: Version::new(0, 0, 0),
            hi: Some(lo),
        },
    }
}

/// Union of intervals, one per `||` alternative (conjunctions already
/// intersected away). Empty intervals are kept; emptiness is queried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    intervals: Vec<Interval>,
}

impl ConstraintSet {
    pub fn matches(&self, v: Version) -> bool {
        self.intervals
            .iter()
            .any(|i| v >= i.lo && i.hi.is_none_or(|hi| v < hi))
    }

    /// True when some admitted version is `>= floor`.
    pub fn admits_at_or_above(&self, floor: Version) -> bool {
        self.intervals.iter().any(|i| {
            !i.is_empty() && i.hi.is_none_or(|hi| hi > floor)
        })
    }

    pub fn is_satisfiable(&self) -> bool {
        self.intervals.iter().any(|i| !i.is_empty())
    }
}

fn parse_partial(token: &str) -> Result<Partial, PragmaError> {
    let bad = || PragmaError::Malformed(token.to_string());
    let token = token.strip_prefix('v').unwrap_or(token);
    if token.is_empty() {
        return Err(bad());
    }
    let mut comps = [None, None, None];
    let pieces: Vec<&str> = token.split('.').collect();
    if pieces.len() > 3 {
        return Err(bad());
    }
    let mut wildcard_seen = false;
    for (i, piece) in pieces.iter().enumerate() {
        if matches!(*piece, "*" | "x" | "X") {
            wildcard_seen = true;
            continue;
        }
        if wildcard_seen || piece.is_empty() || !piece.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        comps[i] = Some(piece.parse().map_err(|_| bad())?);
    }
    Ok(Partial {
        major: comps[0],
        minor: comps[1],
        patch: comps[2],
    })
}

/// Parses one constraint expression, e.g. `>=0.4.22 <0.6.0 || ^0.8.1`.
pub fn parse_constraint(text: &str) -> Result<ConstraintSet, PragmaError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(PragmaError::Malformed(String::new()));
    }
    let mut intervals = Vec::new();
    for alternative in text.split("||") {
        let mut acc = Interval::all();
        let mut terms = 0;
        let mut rest = alternative.trim();
        if rest.is_empty() {
            return Err(PragmaError::Malformed(alternative.to_string()));
        }
        while !rest.is_empty() {
            let (op, after) = if let Some(r) = rest.strip_prefix(">=") {
                (Op::Ge, r)
            } else if let Some(r) = rest.strip_prefix("<=") {
                (Op::Le, r)
            } else if let Some(r) = rest.strip_prefix('>') {
                (Op::Gt, r)
            } else if let Some(r) = rest.strip_prefix('<') {
                (Op::Lt, r)
            } else if let Some(r) = rest.strip_prefix('^') {
                (Op::Caret, r)
            } else if let Some(r) = rest.strip_prefix('~') {
                (Op::Tilde, r)
            } else if let Some(r) = rest.strip_prefix('=') {
                (Op::Exact, r)
            } else {
                (Op::Exact, rest)
            };
            let after = after.trim_start();
            let end = after
                .find(|c: char| c.is_whitespace())
                .unwrap_or(after.len());
            let (token, tail) = after.split_at(end);
            acc = acc.intersect(&term_interval(op, parse_partial(token)?));
            terms += 1;
            rest = tail.trim_start();
        }
        if terms == 0 {
            return Err(PragmaError::Malformed(alternative.to_string()));
        }
        intervals.push(acc);
    }
    Ok(ConstraintSet { intervals })
}

/// Comment-stripped scan for `pragma solidity <constraint>;` directives.
/// Returns the raw constraint texts in order of appearance.
pub fn extract_pragmas(source: &str) -> Vec<String> {
    let stripped = strip_comments(source);
    let mut found = Vec::new();
    let mut rest = stripped.as_str();
    while let Some(at) = rest.find("pragma") {
        rest = &rest[at + "pragma".len()..];
        let body = rest.trim_start();
        let Some(body) = body.strip_prefix("solidity") else {
            continue;
        };
        match body.find(';') {
            Some(semi) => {
                found.push(body[..semi].trim().to_string());
                rest = &body[semi + 1..];
            }
            None => {
                // Unterminated directive: keep the fragment so it surfaces
                // as malformed instead of vanishing.
                found.push(body.trim().to_string());
                rest = "";
            }
        }
    }
    found
}

fn strip_comments(source: &str) -> String {
    let bytes = source.as_bytes();
    let mut out = String::with_capacity(source.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
            out.push(' ');
        } else {
            // Safe to index by byte: comment delimiters are ASCII, and all
            // other bytes are copied through verbatim.
            out.push(bytes[i] as char);
            i += 1;
        }
    }
    out
}
