//! The unified affordance vocabulary shared by every game.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of unified affordance tags.
pub const TAG_COUNT: usize = 13;

/// One of the thirteen unified affordance tags, in their fixed vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    Block,
    Breakable,
    Climbable,
    Collectable,
    Element,
    Empty,
    Hazard,
    Moving,
    Openable,
    Passable,
    Pipe,
    Solid,
    Wall,
}

impl Tag {
    pub const ALL: [Tag; TAG_COUNT] = [
        Tag::Block,
        Tag::Breakable,
        Tag::Climbable,
        Tag::Collectable,
        Tag::Element,
        Tag::Empty,
        Tag::Hazard,
        Tag::Moving,
        Tag::Openable,
        Tag::Passable,
        Tag::Pipe,
        Tag::Solid,
        Tag::Wall,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }

    /// Lower-case name used in legends, JSON sidecars and reports.
    pub fn name(self) -> &'static str {
        match self {
            Tag::Block => "block",
            Tag::Breakable => "breakable",
            Tag::Climbable => "climbable",
            Tag::Collectable => "collectable",
            Tag::Element => "element",
            Tag::Empty => "empty",
            Tag::Hazard => "hazard",
            Tag::Moving => "moving",
            Tag::Openable => "openable",
            Tag::Passable => "passable",
            Tag::Pipe => "pipe",
            Tag::Solid => "solid",
            Tag::Wall => "wall",
        }
    }

    /// The tag order as names, as written into sidecar files.
    pub fn order() -> Vec<String> {
        Tag::ALL.iter().map(|t| t.name().to_string()).collect()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tag> {
        let lower = s.trim().to_ascii_lowercase();
        Tag::ALL
            .iter()
            .copied()
            .find(|t| t.name() == lower)
            .ok_or_else(|| Error::Legend(format!("unknown tag {s:?}")))
    }
}

/// Multi-hot vector over the unified tags. The all-zero vector means
/// "unknown" and is what unannotated games carry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AffordanceVector(u16);

impl AffordanceVector {
    pub const EMPTY: AffordanceVector = AffordanceVector(0);

    const MASK: u16 = (1 << TAG_COUNT) - 1;

    pub fn from_bits(bits: u16) -> Result<Self> {
        if bits & !Self::MASK != 0 {
            return Err(Error::Format(format!("affordance bits {bits:#06x} exceed {TAG_COUNT} tags")));
        }
        Ok(AffordanceVector(bits))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn from_tags<I: IntoIterator<Item = Tag>>(tags: I) -> Self {
        let mut v = AffordanceVector::EMPTY;
        for t in tags {
            v.insert(t);
        }
        v
    }

    /// Builds a vector from 0/1 flags in tag order.
    pub fn from_flags(flags: &[u8; TAG_COUNT]) -> Result<Self> {
        let mut v = AffordanceVector::EMPTY;
        for (i, &f) in flags.iter().enumerate() {
            match f {
                0 => {}
                1 => v.0 |= 1 << i,
                other => return Err(Error::Format(format!("affordance flag {i} is {other}, expected 0 or 1"))),
            }
        }
        Ok(v)
    }

    /// Thresholds probabilities into a multi-hot vector (`p >= threshold` is set).
    pub fn from_probs<T: Into<f64> + Copy>(probs: &[T], threshold: f64) -> Self {
        let mut v = AffordanceVector::EMPTY;
        for (i, &p) in probs.iter().take(TAG_COUNT).enumerate() {
            if p.into() >= threshold {
                v.0 |= 1 << i;
            }
        }
        v
    }

    pub fn insert(&mut self, tag: Tag) {
        self.0 |= 1 << tag.index();
    }

    pub fn contains(self, tag: Tag) -> bool {
        self.0 & (1 << tag.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn intersection(self, other: Self) -> Self {
        AffordanceVector(self.0 & other.0)
    }

    pub fn union(self, other: Self) -> Self {
        AffordanceVector(self.0 | other.0)
    }

    /// Tags in `self` that are not in `other`.
    pub fn difference(self, other: Self) -> Self {
        AffordanceVector(self.0 & !other.0)
    }

    pub fn tags(self) -> impl Iterator<Item = Tag> {
        Tag::ALL.into_iter().filter(move |t| self.contains(*t))
    }

    pub fn flags(self) -> [u8; TAG_COUNT] {
        let mut out = [0u8; TAG_COUNT];
        for (i, f) in out.iter_mut().enumerate() {
            *f = ((self.0 >> i) & 1) as u8;
        }
        out
    }

    /// Flags as reals, the encoder's affordance input.
    pub fn to_reals<T: num_traits::Float>(self) -> [T; TAG_COUNT] {
        let flags = self.flags();
        let mut out = [T::zero(); TAG_COUNT];
        for (o, f) in out.iter_mut().zip(flags) {
            if f == 1 {
                *o = T::one();
            }
        }
        out
    }

    /// Tag-order bit string such as `"0000010001000"`, first tag first.
    pub fn bit_string(self) -> String {
        self.flags().iter().map(|&f| if f == 1 { '1' } else { '0' }).collect()
    }

    pub fn names(self) -> Vec<&'static str> {
        self.tags().map(Tag::name).collect()
    }
}

impl fmt::Display for AffordanceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.names().join(","))
    }
}

impl Serialize for AffordanceVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffordanceVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let mut v = AffordanceVector::EMPTY;
        for n in names {
            v.insert(n.parse().map_err(serde::de::Error::custom)?);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_parse_case_insensitively() {
        assert_eq!("Passable".parse::<Tag>().unwrap(), Tag::Passable);
        assert_eq!(" SOLID ".parse::<Tag>().unwrap(), Tag::Solid);
        let err = "lava".parse::<Tag>().unwrap_err();
        assert!(err.to_string().contains("lava"));
    }

    #[test]
    fn set_operations() {
        let y = AffordanceVector::from_tags([Tag::Solid, Tag::Passable]);
        let p = AffordanceVector::from_tags([Tag::Solid, Tag::Hazard]);
        assert_eq!(y.intersection(p).count(), 1);
        assert_eq!(y.union(p).count(), 3);
        assert_eq!(y.difference(p), AffordanceVector::from_tags([Tag::Passable]));
    }

    #[test]
    fn flags_round_trip() {
        let v = AffordanceVector::from_tags([Tag::Block, Tag::Wall, Tag::Moving]);
        assert_eq!(AffordanceVector::from_flags(&v.flags()).unwrap(), v);
        assert_eq!(v.bit_string(), "1000000100001");
        assert!(AffordanceVector::from_bits(1 << 13).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut probs = [0.1f32; TAG_COUNT];
        probs[Tag::Empty.index()] = 0.5;
        let v = AffordanceVector::from_probs(&probs, 0.5);
        assert_eq!(v, AffordanceVector::from_tags([Tag::Empty]));
        assert!(AffordanceVector::from_probs(&[0.49f32; TAG_COUNT], 0.5).is_empty());
    }
}
