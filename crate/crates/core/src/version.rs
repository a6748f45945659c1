//! Ordering of platform version labels.
//!
//! Labels are compared chunk by chunk: runs of ASCII digits compare
//! numerically, everything else compares as text. `"9" < "10" < "14"` and
//! `"12" < "12.1" < "13"`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, PartialEq, Eq)]
enum Chunk<'a> {
    Number(&'a str),
    Text(&'a str),
}

fn chunks(label: &str) -> impl Iterator<Item = Chunk<'_>> {
    let bytes = label.as_bytes();
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let digit = bytes[start].is_ascii_digit();
        let end = bytes[start..]
            .iter()
            .position(|b| b.is_ascii_digit() != digit)
            .map_or(bytes.len(), |p| start + p);
        let s = &label[start..end];
        start = end;
        Some(if digit { Chunk::Number(s) } else { Chunk::Text(s) })
    })
}

fn compare_numeric(a: &str, b: &str) -> Ordering {
    let a_trim = a.trim_start_matches('0');
    let b_trim = b.trim_start_matches('0');
    a_trim
        .len()
        .cmp(&b_trim.len())
        .then_with(|| a_trim.cmp(b_trim))
        .then_with(|| a.len().cmp(&b.len()))
}

/// Numeric-aware comparison of two version labels.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let mut left = chunks(a);
    let mut right = chunks(b);
    loop {
        match (left.next(), right.next()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(l), Some(r)) => {
                let ord = match (l, r) {
                    (Chunk::Number(x), Chunk::Number(y)) => compare_numeric(x, y),
                    (Chunk::Number(_), Chunk::Text(_)) => Ordering::Less,
                    (Chunk::Text(_), Chunk::Number(_)) => Ordering::Greater,
                    (Chunk::Text(x), Chunk::Text(y)) => x.cmp(y),
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

/// Inclusive range of platform versions; either bound may be open.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionRange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<String>,
}

impl VersionRange {
    pub fn contains(&self, version: &str) -> bool {
        let above_min = self
            .min
            .as_deref()
            .is_none_or(|min| compare_versions(version, min) != Ordering::Less);
        let below_max = self
            .max
            .as_deref()
            .is_none_or(|max| compare_versions(version, max) != Ordering::Greater);
        above_min && below_max
    }

    /// A range is well ordered when both bounds are present only if
    /// `min <= max`.
    pub fn is_well_ordered(&self) -> bool {
        match (&self.min, &self.max) {
            (Some(min), Some(max)) => compare_versions(min, max) != Ordering::Greater,
            _ => true,
        }
    }
}
