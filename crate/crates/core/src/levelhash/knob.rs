//! Seeded persistence bugs.
//!
//! Each knob rewrites one persistence step of the table. `sites` spreads the
//! bug over that many distinct instruction sites: the n-th firing uses
//! variant `offset + n % sites` of the base site, where variant 0 is the base
//! site itself and variant `v > 0` is `"<base>#<v>"`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crash_enum::ViolationKind;
use crate::error::LevelHashError;
use crate::oracles::BugClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnobKind {
    None,
    /// Token stores are fenced but never flushed.
    MissingFlushToken,
    /// Slot bytes are neither flushed nor fenced before the token is set.
    MissingFenceTokenValue,
    /// Header commits flush all four header lines, three of them untouched.
    FlushWholeHeader,
    /// Slot flushes walk the bucket in 16-byte steps, re-flushing one line.
    ClwbArbitraryRange,
    /// Header stores are fenced but never flushed.
    NonAtomicInit,
    /// Every insert ends with two extra fences.
    ExtraFenceLoop,
    /// One-step movement never clears the source token.
    DuplicateOnMove,
}

impl KnobKind {
    pub const BUGS: [KnobKind; 7] = [
        KnobKind::MissingFlushToken,
        KnobKind::MissingFenceTokenValue,
        KnobKind::FlushWholeHeader,
        KnobKind::ClwbArbitraryRange,
        KnobKind::NonAtomicInit,
        KnobKind::ExtraFenceLoop,
        KnobKind::DuplicateOnMove,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KnobKind::None => "none",
            KnobKind::MissingFlushToken => "missing-flush-token",
            KnobKind::MissingFenceTokenValue => "missing-fence-token-value",
            KnobKind::FlushWholeHeader => "flush-whole-header",
            KnobKind::ClwbArbitraryRange => "clwb-arbitrary-range",
            KnobKind::NonAtomicInit => "non-atomic-init",
            KnobKind::ExtraFenceLoop => "extra-fence-loop",
            KnobKind::DuplicateOnMove => "duplicate-on-move",
        }
    }

    /// The class `check` is guaranteed to report for this knob.
    pub fn advertised(self) -> Option<BugClass> {
        match self {
            KnobKind::None => None,
            KnobKind::MissingFlushToken
            | KnobKind::MissingFenceTokenValue
            | KnobKind::NonAtomicInit => Some(BugClass::UnpersistedCorrectness),
            KnobKind::FlushWholeHeader => Some(BugClass::FlushUntouched),
            KnobKind::ClwbArbitraryRange | KnobKind::DuplicateOnMove => Some(BugClass::ExtraFlush),
            KnobKind::ExtraFenceLoop => Some(BugClass::EmptyFence),
        }
    }

    /// Every class the knob may produce, the advertised one included.
    pub fn documented(self) -> &'static [BugClass] {
        use BugClass::*;
        match self {
            KnobKind::None => &[],
            KnobKind::MissingFlushToken | KnobKind::NonAtomicInit => {
                &[UnpersistedCorrectness, EmptyFence]
            }
            KnobKind::MissingFenceTokenValue => &[UnpersistedCorrectness],
            KnobKind::FlushWholeHeader => &[FlushUntouched],
            KnobKind::ClwbArbitraryRange => &[ExtraFlush],
            KnobKind::ExtraFenceLoop => &[EmptyFence],
            KnobKind::DuplicateOnMove => &[ExtraFlush, EmptyFence],
        }
    }

    /// Crash-image violations the knob is built to expose.
    pub fn crash_violations(self) -> &'static [ViolationKind] {
        match self {
            KnobKind::MissingFenceTokenValue => {
                &[ViolationKind::GarbageSlot, ViolationKind::LostKV]
            }
            KnobKind::DuplicateOnMove => &[ViolationKind::DuplicateKV],
            KnobKind::MissingFlushToken | KnobKind::NonAtomicInit => &[ViolationKind::LostKV],
            _ => &[],
        }
    }
}

impl fmt::Display for KnobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KnobKind {
    type Err = LevelHashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        std::iter::once(KnobKind::None)
            .chain(KnobKind::BUGS)
            .find(|k| k.name() == s)
            .ok_or_else(|| LevelHashError::UnknownKnob(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BugKnob {
    pub kind: KnobKind,
    pub sites: u32,
    #[serde(default)]
    pub offset: u32,
}

impl BugKnob {
    pub fn new(kind: KnobKind) -> Self {
        Self {
            kind,
            sites: 1,
            offset: 0,
        }
    }

    pub fn with_sites(kind: KnobKind, sites: u32) -> Self {
        Self {
            kind,
            sites: sites.max(1),
            offset: 0,
        }
    }
}

/// `name` or `name:sites`.
impl FromStr for BugKnob {
    type Err = LevelHashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, sites) = match s.split_once(':') {
            Some((name, n)) => {
                let n: u32 = n
                    .parse()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| LevelHashError::UnknownKnob(s.to_owned()))?;
                (name, n)
            }
            None => (s, 1),
        };
        Ok(BugKnob::with_sites(name.parse()?, sites))
    }
}

pub fn variant_site(base: &str, variant: u32) -> String {
    if variant == 0 {
        base.to_owned()
    } else {
        format!("{base}#{variant}")
    }
}

/// Strips a `#<variant>` suffix.
pub fn base_site(site: &str) -> &str {
    site.split_once('#').map_or(site, |(base, _)| base)
}

/// Active knobs with their firing counters.
#[derive(Debug, Clone, Default)]
pub(crate) struct KnobSet {
    knobs: Vec<(BugKnob, u64)>,
}

impl KnobSet {
    pub(crate) fn new(knobs: &[BugKnob]) -> Self {
        Self {
            knobs: knobs
                .iter()
                .filter(|k| k.kind != KnobKind::None)
                .map(|&k| (k, 0))
                .collect(),
        }
    }

    pub(crate) fn set(&mut self, knobs: &[BugKnob]) {
        *self = Self::new(knobs);
    }

    /// Fires `kind` if active, returning the site variant to use.
    pub(crate) fn fire(&mut self, kind: KnobKind) -> Option<u32> {
        let (knob, count) = self.knobs.iter_mut().find(|(k, _)| k.kind == kind)?;
        let variant = knob.offset + (*count % u64::from(knob.sites)) as u32;
        *count += 1;
        Some(variant)
    }
}
