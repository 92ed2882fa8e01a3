//! Simulated heap: object graph, roots and size-class allocation accounting.
//!
//! Objects carry no payload. Sizes are accounting numbers: every object has a
//! `requested` size and an `allocated` size rounded up to the next size class,
//! so internal fragmentation is visible to every size computation. External
//! fragmentation is not modeled; free bytes are simply `capacity - live`.

use std::collections::BTreeSet;
use std::fmt;
use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeapError {
    #[error("out of memory: {allocated} bytes requested, {free} bytes free")]
    OutOfMemory { allocated: u64, free: u64 },
    #[error("allocation size must be positive")]
    ZeroSize,
    #[error("object {0} is not alive")]
    DeadObject(ObjectId),
    #[error("write of dangling reference {target} into {obj}")]
    DanglingWrite { obj: ObjectId, target: ObjectId },
    #[error("slot {index} out of bounds for {obj} with {len} slots")]
    SlotOutOfBounds { obj: ObjectId, index: usize, len: usize },
    #[error("object {0} is not a root")]
    NotARoot(ObjectId),
    #[error("invalid size class table: {0}")]
    InvalidSizeClasses(String),
    #[error("audit failed: live_bytes is {recorded}, recomputed {actual}")]
    AuditMismatch { recorded: u64, actual: u64 },
}

/// Handle to a heap object.
///
/// Storage indices are recycled after a sweep, but the generation is bumped
/// on every reuse, so an id is never handed out twice within a heap's life.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId {
    index: u32,
    generation: NonZeroU32,
}

impl ObjectId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}.{}", self.index, self.generation)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Ascending allocation-size denominations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeClassTable {
    classes: Vec<u64>,
    large_object_threshold: u64,
}

impl SizeClassTable {
    pub fn new(classes: Vec<u64>, large_object_threshold: u64) -> Result<Self, HeapError> {
        let table = SizeClassTable {
            classes,
            large_object_threshold,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), HeapError> {
        let bad = |msg: &str| Err(HeapError::InvalidSizeClasses(msg.to_string()));
        if self.classes.is_empty() {
            return bad("no classes");
        }
        if self.classes[0] == 0 {
            return bad("classes must be positive");
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("classes must be strictly ascending");
        }
        if self.large_object_threshold < *self.classes.last().unwrap() {
            return bad("large object threshold below the largest class");
        }
        Ok(())
    }

    pub fn classes(&self) -> &[u64] {
        &self.classes
    }

    pub fn large_object_threshold(&self) -> u64 {
        self.large_object_threshold
    }

    /// Bytes actually reserved for a request of `requested` bytes.
    pub fn allocated_size(&self, requested: u64) -> u64 {
        if requested > self.large_object_threshold {
            return requested;
        }
        let i = self.classes.partition_point(|&c| c < requested);
        match self.classes.get(i) {
            Some(&c) => c,
            // between the last class and the threshold
            None => requested,
        }
    }
}

impl Default for SizeClassTable {
    /// 51 classes: 8-byte steps up to 256, then 19 geometric steps to 8192.
    fn default() -> Self {
        let mut classes: Vec<u64> = (1..=32).map(|i| i * 8).collect();
        let ratio = (8192f64 / 256f64).powf(1.0 / 19.0);
        for i in 1..19 {
            let raw = 256.0 * ratio.powi(i);
            let rounded = ((raw / 8.0).round() as u64) * 8;
            classes.push(rounded);
        }
        classes.push(8192);
        SizeClassTable {
            classes,
            large_object_threshold: 8192,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mark {
    White,
    /// Referent or query root marked before the root closure.
    Premarked,
    /// Premarked and then encountered by the root closure.
    Reached,
    /// Marked by a closure that was then abandoned: survives this
    /// collection, but any later closure claims and traces it.
    Abandoned,
    Black,
}

#[derive(Debug, Clone)]
pub struct HeapObject {
    requested: u64,
    allocated: u64,
    pub(crate) slots: SmallVec<[Option<ObjectId>; 2]>,
    pub(crate) mark: Mark,
    seq: u64,
}

impl HeapObject {
    pub fn requested(&self) -> u64 {
        self.requested
    }

    pub fn allocated(&self) -> u64 {
        self.allocated
    }

    pub fn slots(&self) -> &[Option<ObjectId>] {
        &self.slots
    }

    pub fn is_marked(&self) -> bool {
        self.mark != Mark::White
    }

    /// Position in the global allocation order.
    pub fn creation_seq(&self) -> u64 {
        self.seq
    }
}

#[derive(Debug, Clone)]
struct Cell {
    generation: NonZeroU32,
    object: Option<HeapObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeapConfig {
    pub capacity_bytes: u64,
    #[serde(default)]
    pub size_classes: SizeClassTable,
}

impl Default for HeapConfig {
    fn default() -> Self {
        HeapConfig {
            capacity_bytes: 115_000_000,
            size_classes: SizeClassTable::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Heap {
    capacity: u64,
    classes: SizeClassTable,
    cells: Vec<Cell>,
    free_cells: Vec<u32>,
    roots: BTreeSet<ObjectId>,
    live_bytes: u64,
    live_objects: u64,
    alloc_counter: u64,
    total_allocated: u64,
}

impl Heap {
    pub fn new(config: HeapConfig) -> Result<Self, HeapError> {
        config.size_classes.validate()?;
        Ok(Heap {
            capacity: config.capacity_bytes,
            classes: config.size_classes,
            cells: Vec::new(),
            free_cells: Vec::new(),
            roots: BTreeSet::new(),
            live_bytes: 0,
            live_objects: 0,
            alloc_counter: 0,
            total_allocated: 0,
        })
    }

    pub fn with_capacity(capacity_bytes: u64) -> Self {
        Heap::new(HeapConfig {
            capacity_bytes,
            size_classes: SizeClassTable::default(),
        })
        .expect("default size classes are valid")
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn size_classes(&self) -> &SizeClassTable {
        &self.classes
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn live_objects(&self) -> u64 {
        self.live_objects
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity - self.live_bytes
    }

    /// Sum of allocated bytes over every successful allocation so far.
    pub fn total_allocated_bytes(&self) -> u64 {
        self.total_allocated
    }

    pub fn alloc_count(&self) -> u64 {
        self.alloc_counter
    }

    pub fn alloc(&mut self, requested: u64, slot_count: usize) -> Result<ObjectId, HeapError> {
        if requested == 0 {
            return Err(HeapError::ZeroSize);
        }
        let allocated = self.classes.allocated_size(requested);
        if allocated > self.free_bytes() {
            return Err(HeapError::OutOfMemory {
                allocated,
                free: self.free_bytes(),
            });
        }
        let object = HeapObject {
            requested,
            allocated,
            slots: SmallVec::from_elem(None, slot_count),
            mark: Mark::White,
            seq: self.alloc_counter,
        };
        let id = match self.free_cells.pop() {
            Some(index) => {
                let cell = &mut self.cells[index as usize];
                cell.object = Some(object);
                ObjectId {
                    index,
                    generation: cell.generation,
                }
            }
            None => {
                let index = u32::try_from(self.cells.len()).expect("heap index overflow");
                let generation = NonZeroU32::MIN;
                self.cells.push(Cell {
                    generation,
                    object: Some(object),
                });
                ObjectId { index, generation }
            }
        };
        self.alloc_counter += 1;
        self.live_bytes += allocated;
        self.live_objects += 1;
        self.total_allocated += allocated;
        Ok(id)
    }

    pub fn is_alive(&self, id: ObjectId) -> bool {
        self.object(id).is_some()
    }

    pub fn object(&self, id: ObjectId) -> Option<&HeapObject> {
        let cell = self.cells.get(id.index())?;
        if cell.generation != id.generation {
            return None;
        }
        cell.object.as_ref()
    }

    pub(crate) fn object_mut(&mut self, id: ObjectId) -> Option<&mut HeapObject> {
        let cell = self.cells.get_mut(id.index())?;
        if cell.generation != id.generation {
            return None;
        }
        cell.object.as_mut()
    }

    fn alive(&self, id: ObjectId) -> Result<&HeapObject, HeapError> {
        self.object(id).ok_or(HeapError::DeadObject(id))
    }

    pub fn allocated_size(&self, id: ObjectId) -> Result<u64, HeapError> {
        Ok(self.alive(id)?.allocated)
    }

    pub fn slots(&self, id: ObjectId) -> Result<&[Option<ObjectId>], HeapError> {
        Ok(&self.alive(id)?.slots)
    }

    pub fn slot(&self, id: ObjectId, index: usize) -> Result<Option<ObjectId>, HeapError> {
        let obj = self.alive(id)?;
        obj.slots
            .get(index)
            .copied()
            .ok_or(HeapError::SlotOutOfBounds {
                obj: id,
                index,
                len: obj.slots.len(),
            })
    }

    pub fn set_slot(
        &mut self,
        obj: ObjectId,
        index: usize,
        target: Option<ObjectId>,
    ) -> Result<(), HeapError> {
        if let Some(t) = target {
            if !self.is_alive(t) {
                return Err(HeapError::DanglingWrite { obj, target: t });
            }
        }
        let o = self.object_mut(obj).ok_or(HeapError::DeadObject(obj))?;
        let len = o.slots.len();
        let slot = o
            .slots
            .get_mut(index)
            .ok_or(HeapError::SlotOutOfBounds { obj, index, len })?;
        *slot = target;
        Ok(())
    }

    pub fn add_root(&mut self, obj: ObjectId) -> Result<(), HeapError> {
        self.alive(obj)?;
        self.roots.insert(obj);
        Ok(())
    }

    pub fn remove_root(&mut self, obj: ObjectId) -> Result<(), HeapError> {
        if self.roots.remove(&obj) {
            Ok(())
        } else {
            Err(HeapError::NotARoot(obj))
        }
    }

    pub fn is_root(&self, obj: ObjectId) -> bool {
        self.roots.contains(&obj)
    }

    pub fn roots(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.roots.iter().copied()
    }

    /// Alive objects in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (ObjectId, &HeapObject)> + '_ {
        self.cells.iter().enumerate().filter_map(|(i, c)| {
            c.object.as_ref().map(|o| {
                (
                    ObjectId {
                        index: i as u32,
                        generation: c.generation,
                    },
                    o,
                )
            })
        })
    }

    /// Objects reachable from `starts` by following slots. Traversal enters a
    /// barrier object (it is part of the result) but does not continue past
    /// it, unless the barrier is itself one of the starts. Pure.
    pub fn reachable_from(
        &self,
        starts: &BTreeSet<ObjectId>,
        barriers: &BTreeSet<ObjectId>,
    ) -> BTreeSet<ObjectId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<ObjectId> = Vec::new();
        for &s in starts {
            if self.is_alive(s) && seen.insert(s) {
                stack.push(s);
            }
        }
        while let Some(o) = stack.pop() {
            if barriers.contains(&o) && !starts.contains(&o) {
                continue;
            }
            for &child in self.object(o).map(|x| &x.slots[..]).unwrap_or(&[]) {
                if let Some(c) = child {
                    if seen.insert(c) {
                        stack.push(c);
                    }
                }
            }
        }
        seen
    }

    /// Sum of allocated bytes over a set of objects; dead ids count zero.
    pub fn bytes_of<'a>(&self, ids: impl IntoIterator<Item = &'a ObjectId>) -> u64 {
        ids.into_iter()
            .filter_map(|&id| self.object(id))
            .map(|o| o.allocated)
            .sum()
    }

    /// Recomputes live bytes and checks roots and slots point at alive objects.
    pub fn audit(&self) -> Result<(), HeapError> {
        let actual: u64 = self.iter().map(|(_, o)| o.allocated).sum();
        if actual != self.live_bytes {
            return Err(HeapError::AuditMismatch {
                recorded: self.live_bytes,
                actual,
            });
        }
        for &r in &self.roots {
            self.alive(r)?;
        }
        for (id, o) in self.iter() {
            for t in o.slots.iter().flatten() {
                if !self.is_alive(*t) {
                    return Err(HeapError::DanglingWrite { obj: id, target: *t });
                }
            }
        }
        Ok(())
    }

    pub(crate) fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Id of the alive object stored at `index`, if any.
    pub(crate) fn id_at(&self, index: usize) -> Option<ObjectId> {
        let c = self.cells.get(index)?;
        c.object.as_ref().map(|_| ObjectId {
            index: index as u32,
            generation: c.generation,
        })
    }

    pub(crate) fn mark_of(&self, id: ObjectId) -> Mark {
        self.object(id).map(|o| o.mark).unwrap_or(Mark::White)
    }

    pub(crate) fn set_mark(&mut self, id: ObjectId, mark: Mark) {
        if let Some(o) = self.object_mut(id) {
            o.mark = mark;
        }
    }

    /// Releases an object. Roots pointing at it are dropped as well.
    pub(crate) fn free(&mut self, index: usize) -> u64 {
        let cell = &mut self.cells[index];
        let Some(obj) = cell.object.take() else {
            return 0;
        };
        let id = ObjectId {
            index: index as u32,
            generation: cell.generation,
        };
        cell.generation = cell
            .generation
            .checked_add(1)
            .expect("object generation overflow");
        self.roots.remove(&id);
        self.free_cells.push(index as u32);
        self.live_bytes -= obj.allocated;
        self.live_objects -= 1;
        obj.allocated
    }
}
