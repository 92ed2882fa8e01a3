//! Priority references and the spaces that group them.
//!
//! A [`PrioReference`] holds one referent and an integer priority. The
//! collector may clear it to keep its [`PrioSpace`] within the space's bound,
//! but only after every lower-priority reference in the same space has been
//! cleared. Each space keeps its references ordered by priority (highest
//! first) with creation order breaking ties, so the collector can walk them
//! without sorting.

use std::cmp::Reverse;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heap::{Heap, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefError {
    #[error("invalid bound: {0}")]
    InvalidBound(String),
    #[error("referent {0} is not alive")]
    DanglingReferent(ObjectId),
    #[error("unknown priority space {0:?}")]
    UnknownSpace(SpaceId),
    #[error("priority reference {0:?} not found")]
    NotFound(RefId),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct SpaceId(pub(crate) u32);

impl SpaceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct RefId(pub(crate) u32);

impl fmt::Display for RefId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ref{}", self.0)
    }
}

/// How a space's byte bound is derived at collection time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum BoundSpec {
    /// Exact byte bound.
    Fixed(u64),
    /// Fraction of total heap capacity.
    FractionOfHeap(f64),
    /// Fraction of the memory not held by non-space live data.
    FractionOfFree(f64),
    /// Keep at least this many bytes free: bound = capacity - (L + reserve).
    AdaptiveReserve(u64),
}

impl BoundSpec {
    pub fn validate(&self) -> Result<(), RefError> {
        match *self {
            BoundSpec::FractionOfHeap(f) | BoundSpec::FractionOfFree(f) => {
                if !(0.0..=1.0).contains(&f) || f.is_nan() {
                    return Err(RefError::InvalidBound(format!(
                        "fraction {f} outside [0, 1]"
                    )));
                }
                Ok(())
            }
            BoundSpec::Fixed(_) | BoundSpec::AdaptiveReserve(_) => Ok(()),
        }
    }

    /// Whether the bound depends on the non-space live size, which is only
    /// known after the root closure.
    pub fn needs_live_size(&self) -> bool {
        matches!(
            self,
            BoundSpec::FractionOfFree(_) | BoundSpec::AdaptiveReserve(_)
        )
    }
}

impl fmt::Display for BoundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundSpec::Fixed(b) => write!(f, "bytes:{b}"),
            BoundSpec::FractionOfHeap(x) => write!(f, "heap:{x}"),
            BoundSpec::FractionOfFree(x) => write!(f, "free:{x}"),
            BoundSpec::AdaptiveReserve(r) => write!(f, "reserve:{r}"),
        }
    }
}

/// What happens to the entry being traced when the bound is crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvictionMode {
    /// Stop mid-entry; the partial entry is abandoned.
    #[default]
    Strict,
    /// Finish marking the current entry and keep it, then stop.
    EntryBoundary,
}

#[derive(Debug, Clone)]
pub struct PrioReference {
    pub(crate) referent: Option<ObjectId>,
    pub(crate) priority: i64,
    pub(crate) seq: u64,
    pub(crate) gc_size: u64,
    pub(crate) fresh: bool,
    pub(crate) space: SpaceId,
}

impl PrioReference {
    pub fn referent(&self) -> Option<ObjectId> {
        self.referent
    }
    pub fn priority(&self) -> i64 {
        self.priority
    }
    pub fn creation_seq(&self) -> u64 {
        self.seq
    }
    pub fn space(&self) -> SpaceId {
        self.space
    }
}

type OrderKey = (Reverse<i64>, u64, RefId);

#[derive(Debug, Clone)]
pub struct PrioSpace {
    bound: BoundSpec,
    mode: EvictionMode,
    order: BTreeSet<OrderKey>,
    pub(crate) gc_size: u64,
    pub(crate) fresh: bool,
    pub(crate) last_bound: Option<u64>,
}

impl PrioSpace {
    pub fn bound(&self) -> BoundSpec {
        self.bound
    }
    pub fn eviction_mode(&self) -> EvictionMode {
        self.mode
    }
    pub fn len(&self) -> usize {
        self.order.len()
    }
    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
    /// Byte bound resolved at the most recent collection.
    pub fn last_bound(&self) -> Option<u64> {
        self.last_bound
    }
    /// References from highest to lowest priority, ties by creation order.
    pub fn iter(&self) -> impl Iterator<Item = RefId> + '_ {
        self.order.iter().map(|&(_, _, r)| r)
    }
}

/// Registry owning every space and reference.
#[derive(Debug, Clone, Default)]
pub struct Spaces {
    spaces: Vec<PrioSpace>,
    refs: Vec<Option<PrioReference>>,
    next_seq: u64,
}

impl Spaces {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_space(&mut self, bound: BoundSpec, mode: EvictionMode) -> Result<SpaceId, RefError> {
        bound.validate()?;
        let id = SpaceId(self.spaces.len() as u32);
        self.spaces.push(PrioSpace {
            bound,
            mode,
            order: BTreeSet::new(),
            gc_size: 0,
            fresh: false,
            last_bound: None,
        });
        Ok(id)
    }

    /// Spaces in registration order.
    pub fn ids(&self) -> impl Iterator<Item = SpaceId> {
        (0..self.spaces.len() as u32).map(SpaceId)
    }

    pub fn space(&self, id: SpaceId) -> Result<&PrioSpace, RefError> {
        self.spaces.get(id.index()).ok_or(RefError::UnknownSpace(id))
    }

    pub(crate) fn space_mut(&mut self, id: SpaceId) -> Result<&mut PrioSpace, RefError> {
        self.spaces
            .get_mut(id.index())
            .ok_or(RefError::UnknownSpace(id))
    }

    pub fn new_ref(
        &mut self,
        heap: &Heap,
        space: SpaceId,
        obj: ObjectId,
        priority: i64,
    ) -> Result<RefId, RefError> {
        if !heap.is_alive(obj) {
            return Err(RefError::DanglingReferent(obj));
        }
        let id = RefId(u32::try_from(self.refs.len()).expect("reference id overflow"));
        let seq = self.next_seq;
        self.space_mut(space)?.order.insert((Reverse(priority), seq, id));
        self.next_seq += 1;
        self.refs.push(Some(PrioReference {
            referent: Some(obj),
            priority,
            seq,
            gc_size: 0,
            fresh: false,
            space,
        }));
        Ok(id)
    }

    pub fn get(&self, r: RefId) -> Result<&PrioReference, RefError> {
        self.refs
            .get(r.0 as usize)
            .and_then(Option::as_ref)
            .ok_or(RefError::NotFound(r))
    }

    fn get_mut(&mut self, r: RefId) -> Result<&mut PrioReference, RefError> {
        self.refs
            .get_mut(r.0 as usize)
            .and_then(Option::as_mut)
            .ok_or(RefError::NotFound(r))
    }

    pub fn set_priority(&mut self, r: RefId, priority: i64) -> Result<(), RefError> {
        let (old, seq, space) = {
            let rf = self.get(r)?;
            (rf.priority, rf.seq, rf.space)
        };
        if old == priority {
            return Ok(());
        }
        let order = &mut self.space_mut(space)?.order;
        order.remove(&(Reverse(old), seq, r));
        order.insert((Reverse(priority), seq, r));
        self.get_mut(r)?.priority = priority;
        Ok(())
    }

    pub fn priority(&self, r: RefId) -> Result<i64, RefError> {
        Ok(self.get(r)?.priority)
    }

    /// The referent, or `None` once the collector has cleared the reference.
    pub fn deref(&self, r: RefId) -> Result<Option<ObjectId>, RefError> {
        Ok(self.get(r)?.referent)
    }

    pub fn has_gc_size(&self, r: RefId) -> Result<bool, RefError> {
        Ok(self.get(r)?.fresh)
    }

    /// Last size computed by the collector; resets the freshness flag.
    pub fn get_gc_size(&mut self, r: RefId) -> Result<u64, RefError> {
        let rf = self.get_mut(r)?;
        rf.fresh = false;
        Ok(rf.gc_size)
    }

    /// Size without touching the freshness flag.
    pub fn peek_gc_size(&self, r: RefId) -> Result<u64, RefError> {
        Ok(self.get(r)?.gc_size)
    }

    pub fn space_has_gc_size(&self, s: SpaceId) -> Result<bool, RefError> {
        Ok(self.space(s)?.fresh)
    }

    pub fn space_gc_size(&mut self, s: SpaceId) -> Result<u64, RefError> {
        let sp = self.space_mut(s)?;
        sp.fresh = false;
        Ok(sp.gc_size)
    }

    pub fn remove_ref(&mut self, r: RefId) -> Result<(), RefError> {
        let rf = self
            .refs
            .get_mut(r.0 as usize)
            .and_then(Option::take)
            .ok_or(RefError::NotFound(r))?;
        self.spaces[rf.space.index()]
            .order
            .remove(&(Reverse(rf.priority), rf.seq, r));
        Ok(())
    }

    /// Every live reference, in id order.
    pub fn iter_refs(&self) -> impl Iterator<Item = (RefId, &PrioReference)> + '_ {
        self.refs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (RefId(i as u32), r)))
    }

    pub(crate) fn ordered(&self, s: SpaceId) -> Vec<RefId> {
        self.spaces[s.index()].iter().collect()
    }

    pub(crate) fn ref_mut(&mut self, r: RefId) -> &mut PrioReference {
        self.get_mut(r).expect("collector holds a live reference id")
    }
}
