//! The per-image multi-view record and sources that yield them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::preprocess::{FftFeatures, PatchMatrix, StatFeatures};
use crate::semantic::{ContentId, GlobalDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(Error::format(format!("label {other} is not 0 or 1"))),
        }
    }

    pub fn as_f32(self) -> f32 {
        self as u8 as f32
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "real" => Ok(Label::Real),
            "1" | "fake" => Ok(Label::Fake),
            other => Err(Error::format(format!("unknown label {other:?}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

/// One image's four feature views plus its label.
///
/// `patches` may be absent when a dataset stores only the compact views; the
/// model needs them, so such records must be completed before inference.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewRecord {
    pub id: ContentId,
    pub label: Label,
    pub global: GlobalDescriptor,
    pub fft: FftFeatures,
    pub stat: StatFeatures,
    pub patches: Option<PatchMatrix>,
}

impl MultiViewRecord {
    pub fn patches(&self) -> Result<&PatchMatrix> {
        self.patches
            .as_ref()
            .ok_or_else(|| Error::shape(format!("record {} has no patch view", self.id)))
    }
}

/// Random-access source of records. Implementations must be deterministic:
/// the same index always yields the same record.
pub trait RecordSource: Sync {
    fn len(&self) -> usize;

    fn record(&self, index: usize) -> Result<MultiViewRecord>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RecordSource for [MultiViewRecord] {
    fn len(&self) -> usize {
        <[MultiViewRecord]>::len(self)
    }

    fn record(&self, index: usize) -> Result<MultiViewRecord> {
        self.get(index).cloned().ok_or(Error::Index {
            index,
            len: <[MultiViewRecord]>::len(self),
        })
    }
}

impl RecordSource for Vec<MultiViewRecord> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn record(&self, index: usize) -> Result<MultiViewRecord> {
        self.as_slice().record(index)
    }
}

/// Selected indices of another source, in the given order.
pub struct Subset<'a, S: RecordSource + ?Sized> {
    inner: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: RecordSource + ?Sized> Subset<'a, S> {
    pub fn new(inner: &'a S, indices: Vec<usize>) -> Self {
        Subset { inner, indices }
    }
}

impl<S: RecordSource + ?Sized> RecordSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn record(&self, index: usize) -> Result<MultiViewRecord> {
        let &i = self.indices.get(index).ok_or(Error::Index {
            index,
            len: self.indices.len(),
        })?;
        self.inner.record(i)
    }
}
