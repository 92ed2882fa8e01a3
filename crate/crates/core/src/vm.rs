//! The simulated runtime: a heap, its priority spaces and size queries, and
//! the collection history.

use crate::collector::{self, CollectionStats, FutureId, Queries, QueryError, QueueId};
use crate::heap::{Heap, HeapConfig, HeapError, ObjectId};
use crate::refs::{RefError, RefId, SpaceId, Spaces};

#[derive(Debug)]
pub struct Vm {
    heap: Heap,
    spaces: Spaces,
    queries: Queries,
    history: Vec<CollectionStats>,
    gc_interval: Option<u64>,
    allocated_at_last_gc: u64,
}

impl Vm {
    pub fn new(config: HeapConfig) -> Result<Self, HeapError> {
        Ok(Self::with_heap(Heap::new(config)?))
    }

    pub fn with_heap(heap: Heap) -> Self {
        Vm {
            heap,
            spaces: Spaces::new(),
            queries: Queries::new(),
            history: Vec::new(),
            gc_interval: None,
            allocated_at_last_gc: 0,
        }
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }
    pub fn heap_mut(&mut self) -> &mut Heap {
        &mut self.heap
    }
    pub fn spaces(&self) -> &Spaces {
        &self.spaces
    }
    pub fn spaces_mut(&mut self) -> &mut Spaces {
        &mut self.spaces
    }
    pub fn queries(&self) -> &Queries {
        &self.queries
    }
    pub fn queries_mut(&mut self) -> &mut Queries {
        &mut self.queries
    }

    /// Also collect after every `bytes` of allocation, not only when full.
    pub fn set_gc_interval(&mut self, bytes: Option<u64>) {
        self.gc_interval = bytes.filter(|b| *b > 0);
    }

    /// Allocates, collecting once if the heap is full or the allocation
    /// interval has elapsed. Fails with `OutOfMemory` if a collection did
    /// not free enough.
    pub fn alloc(&mut self, requested: u64, slots: usize) -> Result<ObjectId, HeapError> {
        if let Some(iv) = self.gc_interval {
            if self.heap.total_allocated_bytes() - self.allocated_at_last_gc >= iv {
                self.collect();
            }
        }
        match self.heap.alloc(requested, slots) {
            Err(HeapError::OutOfMemory { .. }) => {
                self.collect();
                self.heap.alloc(requested, slots)
            }
            r => r,
        }
    }

    pub fn collect(&mut self) -> &CollectionStats {
        let idx = self.history.len() as u64 + 1;
        let st = collector::collect(&mut self.heap, &mut self.spaces, &mut self.queries, idx);
        self.allocated_at_last_gc = self.heap.total_allocated_bytes();
        self.history.push(st);
        self.history.last().unwrap()
    }

    pub fn gc_count(&self) -> u64 {
        self.history.len() as u64
    }

    pub fn collections(&self) -> &[CollectionStats] {
        &self.history
    }

    pub fn new_ref(&mut self, space: SpaceId, obj: ObjectId, priority: i64) -> Result<RefId, RefError> {
        self.spaces.new_ref(&self.heap, space, obj, priority)
    }

    pub fn size_query(&mut self, queue: QueueId, obj: ObjectId) -> Result<FutureId, QueryError> {
        self.queries.size_query(&self.heap, queue, obj)
    }
}
