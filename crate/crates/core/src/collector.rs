//! Stop-the-world mark/sweep with size queries and bounded marking.
//!
//! A collection runs in this order:
//!
//! 1. resolve byte bounds that depend only on heap capacity;
//! 2. premark every priority-reference referent and every size-query root;
//! 3. close over the roots, never traversing past a premarked object, and
//!    sum the bytes of everything marked so far (the non-space live size);
//!    bounds that need that size are resolved now;
//! 4. per space, in registration order, revisit references from highest to
//!    lowest priority, closing over each referent and charging newly marked
//!    bytes until the space bound is hit; then run the size queries;
//! 5. clear references that were evicted or whose referent stayed unmarked;
//! 6. null slots of marked objects that point at unmarked ones;
//! 7. sweep.
//!
//! Every object is charged to at most one reference or query per collection:
//! the first closure to mark it. Premarked objects that the root closure ran
//! into are root-reachable and are never charged to anyone.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::heap::{Heap, Mark, ObjectId};
use crate::refs::{BoundSpec, EvictionMode, RefId, SpaceId, Spaces};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("query root {0} is not alive")]
    DeadQueryRoot(ObjectId),
    #[error("{0} is already queried in this queue")]
    DuplicateQuery(ObjectId),
    #[error("unknown query queue {0:?}")]
    UnknownQueue(QueueId),
    #[error("size future {0:?} not found")]
    NotFound(FutureId),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct FutureId(u32);

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct QueueId(u32);

/// Deferred result of a size query, filled in at every collection.
#[derive(Debug, Clone)]
pub struct GcSizeFuture {
    query: ObjectId,
    size: u64,
    fresh: bool,
    queue: QueueId,
}

impl GcSizeFuture {
    pub fn query(&self) -> ObjectId {
        self.query
    }
    pub fn is_fresh(&self) -> bool {
        self.fresh
    }
    pub fn queue(&self) -> QueueId {
        self.queue
    }
}

#[derive(Debug, Clone, Default)]
pub struct QueryQueue {
    futures: VecDeque<FutureId>,
}

impl QueryQueue {
    pub fn iter(&self) -> impl Iterator<Item = FutureId> + '_ {
        self.futures.iter().copied()
    }
    pub fn len(&self) -> usize {
        self.futures.len()
    }
    pub fn is_empty(&self) -> bool {
        self.futures.is_empty()
    }
}

/// All size-query queues and their futures.
#[derive(Debug, Clone, Default)]
pub struct Queries {
    futures: Vec<Option<GcSizeFuture>>,
    queues: Vec<QueryQueue>,
}

impl Queries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_queue(&mut self) -> QueueId {
        self.queues.push(QueryQueue::default());
        QueueId(self.queues.len() as u32 - 1)
    }

    pub fn queue(&self, q: QueueId) -> Result<&QueryQueue, QueryError> {
        self.queues
            .get(q.0 as usize)
            .ok_or(QueryError::UnknownQueue(q))
    }

    /// Issues a size query at the back of `queue`.
    pub fn size_query(
        &mut self,
        heap: &Heap,
        queue: QueueId,
        obj: ObjectId,
    ) -> Result<FutureId, QueryError> {
        if !heap.is_alive(obj) {
            return Err(QueryError::DeadQueryRoot(obj));
        }
        let q = self
            .queues
            .get(queue.0 as usize)
            .ok_or(QueryError::UnknownQueue(queue))?;
        if q.futures
            .iter()
            .any(|f| self.futures[f.0 as usize].as_ref().map(|x| x.query) == Some(obj))
        {
            return Err(QueryError::DuplicateQuery(obj));
        }
        let id = FutureId(self.futures.len() as u32);
        self.futures.push(Some(GcSizeFuture {
            query: obj,
            size: 0,
            fresh: false,
            queue,
        }));
        self.queues[queue.0 as usize].futures.push_back(id);
        Ok(id)
    }

    /// Moves a future to the front of its queue so it is sized first.
    pub fn move_to_front(&mut self, f: FutureId) -> Result<(), QueryError> {
        let queue = self.future(f)?.queue;
        let q = &mut self.queues[queue.0 as usize].futures;
        q.retain(|x| *x != f);
        q.push_front(f);
        Ok(())
    }

    pub fn remove(&mut self, f: FutureId) -> Result<(), QueryError> {
        let fut = self
            .futures
            .get_mut(f.0 as usize)
            .and_then(Option::take)
            .ok_or(QueryError::NotFound(f))?;
        self.queues[fut.queue.0 as usize].futures.retain(|x| *x != f);
        Ok(())
    }

    pub fn future(&self, f: FutureId) -> Result<&GcSizeFuture, QueryError> {
        self.futures
            .get(f.0 as usize)
            .and_then(Option::as_ref)
            .ok_or(QueryError::NotFound(f))
    }

    pub fn is_fresh(&self, f: FutureId) -> Result<bool, QueryError> {
        Ok(self.future(f)?.fresh)
    }

    /// Size from the last collection; consuming it resets freshness.
    pub fn get_size(&mut self, f: FutureId) -> Result<u64, QueryError> {
        let fut = self
            .futures
            .get_mut(f.0 as usize)
            .and_then(Option::as_mut)
            .ok_or(QueryError::NotFound(f))?;
        fut.fresh = false;
        Ok(fut.size)
    }

    fn query_roots(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.futures.iter().flatten().map(|f| f.query)
    }
}

/// Per-space outcome of one collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpaceStats {
    pub space: Option<SpaceId>,
    pub bound_bytes: u64,
    /// Accounted running sum; excludes an abandoned entry's partial bytes.
    pub retained_bytes: u64,
    pub retained_entries: u64,
    pub evicted_entries: u64,
    /// Unmarked bytes reachable from the evicted referents.
    pub evicted_bytes: u64,
    pub abandoned: Option<RefId>,
    /// References cleared by this collection, in priority order.
    pub cleared: Vec<RefId>,
}

/// Objects touched per phase; the simulated cost of a collection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseWork {
    pub premarked: u64,
    pub root_marked: u64,
    pub space_marked: u64,
    pub query_marked: u64,
    /// Marked under root-reachable referents whose reference was evicted.
    pub reached_marked: u64,
    pub nulled_slots: u64,
    pub swept: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectionStats {
    pub gc_index: u64,
    pub live_bytes_before: u64,
    pub marked_objects: u64,
    pub marked_bytes: u64,
    pub freed_objects: u64,
    pub freed_bytes: u64,
    /// Live bytes outside every space (L).
    pub non_space_live_bytes: u64,
    pub spaces: Vec<SpaceStats>,
    pub query_bytes: u64,
    pub work: PhaseWork,
}

impl CollectionStats {
    pub fn any_abandoned(&self) -> bool {
        self.spaces.iter().any(|s| s.abandoned.is_some())
    }
}

/// Resolves a bound to bytes. `non_space_live` is ignored by bounds that do
/// not depend on it.
pub fn resolve_bound(spec: BoundSpec, capacity: u64, non_space_live: u64) -> u64 {
    match spec {
        BoundSpec::Fixed(b) => b,
        BoundSpec::FractionOfHeap(f) => (f * capacity as f64).round() as u64,
        BoundSpec::FractionOfFree(f) => {
            (f * capacity.saturating_sub(non_space_live) as f64).round() as u64
        }
        BoundSpec::AdaptiveReserve(r) => capacity.saturating_sub(non_space_live.saturating_add(r)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClosureStatus {
    Complete,
    /// Crossed the bound in entry-boundary mode; the entry was finished.
    Exceeded,
    Abandoned,
}

#[derive(Debug, Clone, Copy)]
struct ClosureOutcome {
    charged: u64,
    marked: u64,
    status: ClosureStatus,
}

/// One collection in progress. The phase methods must be called in order;
/// [`collect`] does that.
pub struct Collection<'a> {
    heap: &'a mut Heap,
    spaces: &'a mut Spaces,
    queries: &'a mut Queries,
    premarked: Vec<ObjectId>,
    stack: Vec<ObjectId>,
    /// Objects charged by the closure in progress.
    claimed: Vec<ObjectId>,
    evicted: Vec<(RefId, ObjectId)>,
    stats: CollectionStats,
}

impl<'a> Collection<'a> {
    pub fn new(
        heap: &'a mut Heap,
        spaces: &'a mut Spaces,
        queries: &'a mut Queries,
        gc_index: u64,
    ) -> Self {
        let stats = CollectionStats {
            gc_index,
            live_bytes_before: heap.live_bytes(),
            ..Default::default()
        };
        Collection {
            heap,
            spaces,
            queries,
            premarked: Vec::new(),
            stack: Vec::new(),
            claimed: Vec::new(),
            evicted: Vec::new(),
            stats,
        }
    }

    /// Bounds computable before marking; `None` for those that need L.
    pub fn resolve_static_bounds(&self) -> Vec<Option<u64>> {
        let cap = self.heap.capacity();
        self.spaces
            .ids()
            .map(|s| {
                let spec = self.spaces.space(s).expect("listed space").bound();
                (!spec.needs_live_size()).then(|| resolve_bound(spec, cap, 0))
            })
            .collect()
    }

    pub fn premark(&mut self) {
        let referents: Vec<ObjectId> = self
            .spaces
            .iter_refs()
            .filter_map(|(_, r)| r.referent)
            .chain(self.queries.query_roots())
            .collect();
        for o in referents {
            if self.heap.mark_of(o) == Mark::White && self.heap.is_alive(o) {
                self.heap.set_mark(o, Mark::Premarked);
                self.premarked.push(o);
            }
        }
        self.stats.work.premarked = self.premarked.len() as u64;
    }

    /// Marks everything reachable from the roots without passing premarked
    /// objects. Returns the non-space live size L: bytes marked here plus the
    /// premarked objects this closure ran into.
    pub fn root_closure(&mut self) -> u64 {
        let mut live = 0u64;
        let mut marked = 0u64;
        let roots: Vec<ObjectId> = self.heap.roots().collect();
        for r in roots {
            self.root_visit(r, &mut live, &mut marked);
        }
        while let Some(o) = self.stack.pop() {
            let n = self.heap.object(o).map_or(0, |x| x.slots.len());
            for i in 0..n {
                if let Some(c) = self.heap.object(o).and_then(|x| x.slots[i]) {
                    self.root_visit(c, &mut live, &mut marked);
                }
            }
        }
        self.stats.work.root_marked = marked;
        self.stats.non_space_live_bytes = live;
        live
    }

    fn root_visit(&mut self, o: ObjectId, live: &mut u64, marked: &mut u64) {
        let Some(obj) = self.heap.object_mut(o) else {
            return;
        };
        match obj.mark {
            Mark::White => {
                obj.mark = Mark::Black;
                *live += obj.allocated();
                *marked += 1;
                self.stack.push(o);
            }
            Mark::Premarked => {
                obj.mark = Mark::Reached;
                *live += obj.allocated();
            }
            Mark::Reached | Mark::Abandoned | Mark::Black => {}
        }
    }

    /// Closure from `start`, charging every newly marked object. With a
    /// `room`, charging past it either abandons (strict) or finishes the
    /// entry and reports the overflow (entry-boundary).
    fn closure(&mut self, start: ObjectId, room: Option<u64>, mode: EvictionMode) -> ClosureOutcome {
        let mut out = ClosureOutcome {
            charged: 0,
            marked: 0,
            status: ClosureStatus::Complete,
        };
        self.stack.clear();
        self.claimed.clear();
        let start_mark = self.heap.mark_of(start);
        match start_mark {
            Mark::Black => return out,
            Mark::Reached => {
                // root-reachable: traverse, but never charge it
                self.heap.set_mark(start, Mark::Black);
                self.stack.push(start);
            }
            Mark::White | Mark::Premarked | Mark::Abandoned => {
                if !self.claim(start, room, mode, &mut out) {
                    return out;
                }
            }
        }
        while let Some(o) = self.stack.pop() {
            let n = self.heap.object(o).map_or(0, |x| x.slots.len());
            for i in 0..n {
                let Some(c) = self.heap.object(o).and_then(|x| x.slots[i]) else {
                    continue;
                };
                match self.heap.mark_of(c) {
                    Mark::White | Mark::Premarked | Mark::Abandoned => {
                        if !self.claim(c, room, mode, &mut out) {
                            self.abandon(start, start_mark);
                            return out;
                        }
                    }
                    // Reached objects are traced by their own reference
                    Mark::Reached | Mark::Black => {}
                }
            }
        }
        out
    }

    /// Keeps what an abandoned closure marked alive for this collection
    /// without treating it as traced.
    fn abandon(&mut self, start: ObjectId, start_mark: Mark) {
        self.stack.clear();
        for &o in &self.claimed {
            self.heap.set_mark(o, Mark::Abandoned);
        }
        if start_mark == Mark::Reached {
            self.heap.set_mark(start, Mark::Reached);
        }
    }

    /// Charges and marks one object. Returns false when the closure must be
    /// abandoned.
    fn claim(
        &mut self,
        o: ObjectId,
        room: Option<u64>,
        mode: EvictionMode,
        out: &mut ClosureOutcome,
    ) -> bool {
        let size = self.heap.object(o).map_or(0, |x| x.allocated());
        if let Some(room) = room {
            if out.status == ClosureStatus::Complete && out.charged + size > room {
                match mode {
                    EvictionMode::Strict => {
                        out.status = ClosureStatus::Abandoned;
                        return false;
                    }
                    EvictionMode::EntryBoundary => out.status = ClosureStatus::Exceeded,
                }
            }
        }
        self.heap.set_mark(o, Mark::Black);
        self.claimed.push(o);
        out.charged += size;
        out.marked += 1;
        self.stack.push(o);
        true
    }

    /// Bounded marking over one space. Returns the accounted retained bytes.
    pub fn prioritized_closure(&mut self, space: SpaceId, bound: u64) -> u64 {
        let mode = self
            .spaces
            .space(space)
            .expect("collector visits registered spaces")
            .eviction_mode();
        let order = self.spaces.ordered(space);
        let mut st = SpaceStats {
            space: Some(space),
            bound_bytes: bound,
            ..Default::default()
        };
        let mut sum = 0u64;
        let mut stopped = false;
        for r in order {
            let referent = {
                let rf = self.spaces.ref_mut(r);
                rf.fresh = true;
                rf.gc_size = 0;
                rf.referent
            };
            let Some(referent) = referent else {
                continue;
            };
            if stopped {
                self.evict(&mut st, r, referent);
                continue;
            }
            let out = self.closure(referent, Some(bound - sum), mode);
            self.stats.work.space_marked += out.marked;
            match out.status {
                ClosureStatus::Complete | ClosureStatus::Exceeded => {
                    self.spaces.ref_mut(r).gc_size = out.charged;
                    sum += out.charged;
                    st.retained_entries += 1;
                    stopped = out.status == ClosureStatus::Exceeded;
                }
                ClosureStatus::Abandoned => {
                    // partial bytes stay marked until the next collection
                    st.abandoned = Some(r);
                    self.evict(&mut st, r, referent);
                    stopped = true;
                }
            }
        }
        st.retained_bytes = sum;
        let sp = self.spaces.space_mut(space).expect("registered space");
        sp.gc_size = sum;
        sp.fresh = true;
        sp.last_bound = Some(bound);
        self.stats.spaces.push(st);
        sum
    }

    fn evict(&mut self, st: &mut SpaceStats, r: RefId, referent: ObjectId) {
        st.evicted_entries += 1;
        st.cleared.push(r);
        self.evicted.push((r, referent));
    }

    /// Sizes every future in `queue`, in queue order, without a bound.
    pub fn query_closure(&mut self, queue: QueueId) {
        let ids: Vec<FutureId> = match self.queries.queue(queue) {
            Ok(q) => q.iter().collect(),
            Err(_) => return,
        };
        for f in ids {
            let root = self.queries.futures[f.0 as usize]
                .as_ref()
                .expect("queued future exists")
                .query;
            let out = self.closure(root, None, EvictionMode::Strict);
            self.stats.work.query_marked += out.marked;
            self.stats.query_bytes += out.charged;
            let fut = self.queries.futures[f.0 as usize].as_mut().unwrap();
            fut.size = out.charged;
            fut.fresh = true;
        }
    }

    /// Rescinds leftover premarks, clears evicted references and nulls every
    /// slot of a marked object that points at an unmarked one.
    pub fn fixup_partial(&mut self) {
        // root-reachable referents whose own closure never ran (their
        // reference was evicted) still keep their whole subtree alive
        let premarked = std::mem::take(&mut self.premarked);
        for &o in &premarked {
            if self.heap.mark_of(o) == Mark::Reached {
                let out = self.closure(o, None, EvictionMode::Strict);
                self.stats.work.reached_marked += out.marked;
            }
        }
        for &o in &premarked {
            if self.heap.mark_of(o) == Mark::Premarked {
                self.heap.set_mark(o, Mark::White);
            }
        }
        self.premarked = premarked;

        self.attribute_evicted_bytes();

        for &(r, _) in &self.evicted {
            self.spaces.ref_mut(r).referent = None;
        }
        // referents left unmarked by any other route
        let stale: Vec<(RefId, SpaceId)> = self
            .spaces
            .iter_refs()
            .filter(|(_, rf)| {
                rf.referent
                    .is_some_and(|o| self.heap.mark_of(o) == Mark::White)
            })
            .map(|(r, rf)| (r, rf.space))
            .collect();
        for (r, s) in stale {
            self.spaces.ref_mut(r).referent = None;
            if let Some(st) = self.stats.spaces.iter_mut().find(|x| x.space == Some(s)) {
                st.evicted_entries += 1;
                st.cleared.push(r);
            }
        }

        let mut nulled = 0u64;
        for i in 0..self.heap.cell_count() {
            let Some(id) = self.heap.id_at(i) else {
                continue;
            };
            if self.heap.mark_of(id) == Mark::White {
                continue;
            }
            let n = self.heap.object(id).unwrap().slots.len();
            for s in 0..n {
                let target = self.heap.object(id).unwrap().slots[s];
                if let Some(t) = target {
                    if self.heap.mark_of(t) == Mark::White {
                        self.heap.object_mut(id).unwrap().slots[s] = None;
                        nulled += 1;
                    }
                }
            }
        }
        self.stats.work.nulled_slots = nulled;
    }

    fn attribute_evicted_bytes(&mut self) {
        let mut seen: HashSet<ObjectId> = HashSet::new();
        let mut per_space: Vec<(SpaceId, u64)> = Vec::new();
        for &(r, referent) in &self.evicted {
            let space = self.spaces.get(r).expect("evicted ref exists").space;
            let mut bytes = 0;
            let mut stack = vec![referent];
            let mut first = true;
            while let Some(o) = stack.pop() {
                let white = self.heap.mark_of(o) == Mark::White;
                if white && seen.insert(o) {
                    bytes += self.heap.object(o).map_or(0, |x| x.allocated());
                } else if !first {
                    continue;
                }
                first = false;
                if let Some(obj) = self.heap.object(o) {
                    stack.extend(
                        obj.slots
                            .iter()
                            .flatten()
                            .filter(|c| self.heap.mark_of(**c) == Mark::White && !seen.contains(c)),
                    );
                }
            }
            per_space.push((space, bytes));
        }
        for (s, b) in per_space {
            if let Some(st) = self.stats.spaces.iter_mut().find(|x| x.space == Some(s)) {
                st.evicted_bytes += b;
            }
        }
    }

    /// Frees every unmarked object and clears all marks. Returns freed bytes.
    pub fn sweep(&mut self) -> u64 {
        let mut freed = 0u64;
        let mut freed_objects = 0u64;
        for i in 0..self.heap.cell_count() {
            let Some(id) = self.heap.id_at(i) else {
                continue;
            };
            if self.heap.mark_of(id) == Mark::White {
                freed += self.heap.free(i);
                freed_objects += 1;
            } else {
                self.heap.set_mark(id, Mark::White);
            }
        }
        self.stats.work.swept = freed_objects;
        self.stats.freed_bytes = freed;
        self.stats.freed_objects = freed_objects;
        freed
    }

    pub fn finish(mut self) -> CollectionStats {
        self.stats.marked_bytes = self.heap.live_bytes();
        self.stats.marked_objects = self.heap.live_objects();
        self.stats
    }
}

/// Runs one full collection.
pub fn collect(
    heap: &mut Heap,
    spaces: &mut Spaces,
    queries: &mut Queries,
    gc_index: u64,
) -> CollectionStats {
    let mut c = Collection::new(heap, spaces, queries, gc_index);
    let static_bounds = c.resolve_static_bounds();
    c.premark();
    let live = c.root_closure();
    let capacity = c.heap.capacity();
    let space_ids: Vec<SpaceId> = c.spaces.ids().collect();
    for (s, fixed) in space_ids.into_iter().zip(static_bounds) {
        let bound = fixed.unwrap_or_else(|| {
            let spec = c.spaces.space(s).expect("registered").bound();
            resolve_bound(spec, capacity, live)
        });
        c.prioritized_closure(s, bound);
    }
    let queues: Vec<QueueId> = (0..c.queries.queues.len() as u32).map(QueueId).collect();
    for q in queues {
        c.query_closure(q);
    }
    c.fixup_partial();
    c.sweep();
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heap::{HeapConfig, SizeClassTable};
    use std::collections::BTreeSet;

    struct World {
        heap: Heap,
        spaces: Spaces,
        queries: Queries,
        gcs: u64,
    }

    impl World {
        fn new() -> Self {
            let heap = Heap::new(HeapConfig {
                capacity_bytes: 1 << 20,
                size_classes: SizeClassTable::new(vec![16, 32, 48, 64], 8192).unwrap(),
            })
            .unwrap();
            World {
                heap,
                spaces: Spaces::new(),
                queries: Queries::new(),
                gcs: 0,
            }
        }
        fn obj(&mut self, size: u64, slots: usize) -> ObjectId {
            self.heap.alloc(size, slots).unwrap()
        }
        fn link(&mut self, a: ObjectId, i: usize, b: ObjectId) {
            self.heap.set_slot(a, i, Some(b)).unwrap();
        }
        fn collect(&mut self) -> CollectionStats {
            self.gcs += 1;
            collect(&mut self.heap, &mut self.spaces, &mut self.queries, self.gcs)
        }
    }

    #[test]
    fn resolve_bound_examples() {
        assert_eq!(resolve_bound(BoundSpec::Fixed(500_000), 1, 0), 500_000);
        assert_eq!(
            resolve_bound(BoundSpec::FractionOfHeap(0.2), 115_000_000, 0),
            23_000_000
        );
        assert_eq!(resolve_bound(BoundSpec::AdaptiveReserve(200), 1000, 300), 500);
        assert_eq!(resolve_bound(BoundSpec::AdaptiveReserve(900), 1000, 300), 0);
        assert_eq!(resolve_bound(BoundSpec::FractionOfFree(0.5), 1000, 200), 400);
    }

    #[test]
    fn empty_heap_collects_to_zero() {
        let mut w = World::new();
        let st = w.collect();
        assert_eq!(st.marked_objects, 0);
        assert_eq!(st.marked_bytes, 0);
        assert_eq!(st.freed_bytes, 0);
        assert_eq!(st.non_space_live_bytes, 0);
    }

    #[test]
    fn root_chain_survives() {
        let mut w = World::new();
        let a = w.obj(16, 1);
        let b = w.obj(16, 1);
        let c = w.obj(16, 0);
        w.link(a, 0, b);
        w.link(b, 0, c);
        w.heap.add_root(a).unwrap();
        let st = w.collect();
        assert_eq!(st.marked_objects, 3);
        assert_eq!(st.freed_bytes, 0);
        assert_eq!(st.non_space_live_bytes, 48);
    }

    #[test]
    fn orphan_is_swept() {
        let mut w = World::new();
        let a = w.obj(16, 0);
        w.heap.add_root(a).unwrap();
        w.obj(48, 0);
        let st = w.collect();
        assert_eq!(st.freed_bytes, 48);
        assert_eq!(st.live_bytes_before, st.marked_bytes + st.freed_bytes);
    }

    #[test]
    fn premark_marks_referents_once() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(1000), EvictionMode::Strict).unwrap();
        let objs: Vec<_> = (0..3).map(|_| w.obj(16, 0)).collect();
        for &o in &objs {
            w.spaces.new_ref(&w.heap, s, o, 0).unwrap();
        }
        let shared = objs[0];
        let q = w.queries.new_queue();
        w.queries.size_query(&w.heap, q, shared).unwrap();
        let r = w.spaces.new_ref(&w.heap, s, shared, 1).unwrap();
        w.spaces.remove_ref(r).unwrap();
        let mut c = Collection::new(&mut w.heap, &mut w.spaces, &mut w.queries, 1);
        c.premark();
        assert_eq!(c.premarked.len(), 3);
        let marked = c.heap.iter().filter(|(_, o)| o.is_marked()).count();
        assert_eq!(marked, 3);
    }

    #[test]
    fn premark_blocks_root_closure() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(1000), EvictionMode::Strict).unwrap();
        let root = w.obj(16, 1);
        let a = w.obj(16, 1);
        let referent = w.obj(16, 1);
        let hidden = w.obj(16, 0);
        w.link(root, 0, a);
        w.link(a, 0, referent);
        w.link(referent, 0, hidden);
        w.heap.add_root(root).unwrap();
        w.spaces.new_ref(&w.heap, s, referent, 0).unwrap();
        let mut c = Collection::new(&mut w.heap, &mut w.spaces, &mut w.queries, 1);
        c.premark();
        let live = c.root_closure();
        assert!(c.heap.object(a).unwrap().is_marked());
        assert!(c.heap.object(referent).unwrap().is_marked());
        assert!(!c.heap.object(hidden).unwrap().is_marked());
        // root, a, and the reached referent
        assert_eq!(live, 48);
    }

    #[test]
    fn without_refs_live_size_is_reachable_bytes() {
        let mut w = World::new();
        let a = w.obj(16, 2);
        let b = w.obj(32, 0);
        let c = w.obj(64, 0);
        w.obj(48, 0);
        w.link(a, 0, b);
        w.link(a, 1, c);
        w.heap.add_root(a).unwrap();
        assert_eq!(w.collect().non_space_live_bytes, 112);
    }

    #[test]
    fn shared_structure_charged_to_first_traced() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(u64::MAX), EvictionMode::Strict).unwrap();
        let o1 = w.obj(16, 1);
        let o2 = w.obj(32, 1);
        let p = w.obj(64, 0);
        w.link(o1, 0, p);
        w.link(o2, 0, p);
        let r1 = w.spaces.new_ref(&w.heap, s, o1, 2).unwrap();
        let r2 = w.spaces.new_ref(&w.heap, s, o2, 1).unwrap();
        let st = w.collect();
        assert_eq!(w.spaces.get_gc_size(r1).unwrap(), 16 + 64);
        assert_eq!(w.spaces.get_gc_size(r2).unwrap(), 32);
        assert_eq!(st.spaces[0].retained_bytes, 112);
        assert_eq!(w.spaces.space_gc_size(s).unwrap(), 112);
    }

    #[test]
    fn zero_bound_evicts_everything() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(0), EvictionMode::Strict).unwrap();
        let refs: Vec<_> = (0..4)
            .map(|i| {
                let o = w.obj(16, 0);
                w.spaces.new_ref(&w.heap, s, o, i).unwrap()
            })
            .collect();
        let st = w.collect();
        assert_eq!(st.spaces[0].retained_bytes, 0);
        assert_eq!(st.spaces[0].evicted_entries, 4);
        assert_eq!(st.freed_bytes, 64);
        for r in refs {
            assert_eq!(w.spaces.deref(r).unwrap(), None);
        }
    }

    #[test]
    fn strict_abandon_nulls_partial_entry() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(40), EvictionMode::Strict).unwrap();
        // head -> a -> b, each 16 bytes: 48 > 40
        let head = w.obj(16, 1);
        let a = w.obj(16, 1);
        let b = w.obj(16, 0);
        w.link(head, 0, a);
        w.link(a, 0, b);
        let r = w.spaces.new_ref(&w.heap, s, head, 0).unwrap();
        let st = w.collect();
        assert_eq!(st.spaces[0].abandoned, Some(r));
        assert_eq!(st.spaces[0].retained_bytes, 0);
        assert_eq!(w.spaces.deref(r).unwrap(), None);
        assert!(w.spaces.has_gc_size(r).unwrap());
        assert_eq!(w.spaces.get_gc_size(r).unwrap(), 0);
        // prefix survives with its dangling slot nulled
        assert!(w.heap.is_alive(head) && w.heap.is_alive(a));
        assert!(!w.heap.is_alive(b));
        assert_eq!(w.heap.slot(a, 0).unwrap(), None);
        w.heap.audit().unwrap();
        let st2 = w.collect();
        assert_eq!(st2.freed_bytes, 32);
    }

    #[test]
    fn entry_boundary_finishes_current_entry() {
        let mut w = World::new();
        let s = w
            .spaces
            .new_space(BoundSpec::Fixed(40), EvictionMode::EntryBoundary)
            .unwrap();
        let head = w.obj(16, 1);
        let a = w.obj(16, 1);
        let b = w.obj(16, 0);
        w.link(head, 0, a);
        w.link(a, 0, b);
        let other = w.obj(16, 0);
        let r = w.spaces.new_ref(&w.heap, s, head, 1).unwrap();
        let r2 = w.spaces.new_ref(&w.heap, s, other, 0).unwrap();
        let st = w.collect();
        assert_eq!(st.spaces[0].retained_bytes, 48);
        assert_eq!(st.spaces[0].abandoned, None);
        assert_eq!(w.spaces.deref(r).unwrap(), Some(head));
        assert_eq!(w.spaces.deref(r2).unwrap(), None);
        assert!(w.heap.is_alive(b));
    }

    #[test]
    fn no_eviction_leaves_graph_unchanged() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(1 << 20), EvictionMode::Strict).unwrap();
        let head = w.obj(16, 2);
        let a = w.obj(16, 0);
        let b = w.obj(16, 0);
        w.link(head, 0, a);
        w.link(head, 1, b);
        w.spaces.new_ref(&w.heap, s, head, 0).unwrap();
        let st = w.collect();
        assert_eq!(st.work.nulled_slots, 0);
        assert_eq!(w.heap.slots(head).unwrap(), &[Some(a), Some(b)]);
    }

    #[test]
    fn root_reachable_query_sizes_zero() {
        let mut w = World::new();
        let root = w.obj(16, 1);
        let x = w.obj(32, 0);
        w.link(root, 0, x);
        w.heap.add_root(root).unwrap();
        let q = w.queries.new_queue();
        let f = w.queries.size_query(&w.heap, q, x).unwrap();
        w.collect();
        assert!(w.queries.is_fresh(f).unwrap());
        assert_eq!(w.queries.get_size(f).unwrap(), 0);
        assert!(!w.queries.is_fresh(f).unwrap());
    }

    #[test]
    fn query_order_decides_shared_charge() {
        let mut w = World::new();
        let o1 = w.obj(16, 1);
        let o2 = w.obj(32, 1);
        let p = w.obj(64, 0);
        w.link(o1, 0, p);
        w.link(o2, 0, p);
        let q = w.queries.new_queue();
        let f1 = w.queries.size_query(&w.heap, q, o1).unwrap();
        let f2 = w.queries.size_query(&w.heap, q, o2).unwrap();
        w.collect();
        assert_eq!(w.queries.get_size(f1).unwrap(), 80);
        assert_eq!(w.queries.get_size(f2).unwrap(), 32);
        w.queries.move_to_front(f2).unwrap();
        w.collect();
        assert_eq!(w.queries.get_size(f1).unwrap(), 16);
        assert_eq!(w.queries.get_size(f2).unwrap(), 96);
        assert_eq!(
            w.queries.size_query(&w.heap, q, o1),
            Err(QueryError::DuplicateQuery(o1))
        );
    }

    #[test]
    fn query_on_unreached_subtree_sums_it() {
        let mut w = World::new();
        let top = w.obj(16, 2);
        let kids: Vec<_> = (0..4).map(|_| w.obj(32, 0)).collect();
        let mid = w.obj(48, 2);
        w.link(top, 0, mid);
        w.link(top, 1, kids[0]);
        w.link(mid, 0, kids[1]);
        w.link(mid, 1, kids[2]);
        let q = w.queries.new_queue();
        let f = w.queries.size_query(&w.heap, q, top).unwrap();
        let expected = w.heap.bytes_of(&w.heap.reachable_from(
            &BTreeSet::from([top]),
            &BTreeSet::new(),
        ));
        w.collect();
        assert_eq!(w.queries.get_size(f).unwrap(), expected);
        assert_eq!(expected, 16 + 48 + 3 * 32);
        assert!(!w.heap.is_alive(kids[3]));
    }

    #[test]
    fn fresh_flags_set_for_all_refs() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(16), EvictionMode::Strict).unwrap();
        let a = w.obj(16, 0);
        let b = w.obj(16, 0);
        let ra = w.spaces.new_ref(&w.heap, s, a, 1).unwrap();
        let rb = w.spaces.new_ref(&w.heap, s, b, 0).unwrap();
        w.collect();
        assert!(w.spaces.has_gc_size(ra).unwrap());
        assert!(w.spaces.has_gc_size(rb).unwrap());
        assert_eq!(w.spaces.get_gc_size(ra).unwrap(), 16);
        assert_eq!(w.spaces.get_gc_size(rb).unwrap(), 0);
        assert_eq!(w.spaces.deref(rb).unwrap(), None);
    }

    #[test]
    fn removed_ref_is_not_sized() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(1000), EvictionMode::Strict).unwrap();
        let a = w.obj(16, 0);
        let r = w.spaces.new_ref(&w.heap, s, a, 0).unwrap();
        w.spaces.remove_ref(r).unwrap();
        let st = w.collect();
        assert_eq!(st.spaces[0].retained_entries, 0);
        assert_eq!(st.spaces[0].retained_bytes, 0);
        assert_eq!(st.freed_bytes, 16);
    }

    #[test]
    fn evicted_root_reachable_referent_keeps_children() {
        let mut w = World::new();
        let s = w.spaces.new_space(BoundSpec::Fixed(0), EvictionMode::Strict).unwrap();
        let root = w.obj(16, 1);
        let x = w.obj(32, 1);
        let y = w.obj(64, 0);
        w.link(root, 0, x);
        w.link(x, 0, y);
        w.heap.add_root(root).unwrap();
        let r = w.spaces.new_ref(&w.heap, s, x, 0).unwrap();
        let st = w.collect();
        assert_eq!(w.spaces.deref(r).unwrap(), None);
        assert_eq!(w.heap.slot(x, 0).unwrap(), Some(y));
        assert_eq!(st.freed_bytes, 0);
        assert_eq!(st.work.nulled_slots, 0);
    }

    #[test]
    fn cross_space_sharing_charges_first_space() {
        let mut w = World::new();
        let s1 = w.spaces.new_space(BoundSpec::Fixed(1000), EvictionMode::Strict).unwrap();
        let s2 = w.spaces.new_space(BoundSpec::Fixed(1000), EvictionMode::Strict).unwrap();
        let o = w.obj(64, 0);
        let r1 = w.spaces.new_ref(&w.heap, s1, o, 0).unwrap();
        let r2 = w.spaces.new_ref(&w.heap, s2, o, 0).unwrap();
        w.collect();
        assert_eq!(w.spaces.get_gc_size(r1).unwrap(), 64);
        assert_eq!(w.spaces.get_gc_size(r2).unwrap(), 0);
    }
}
