//! Caches over the simulated heap: the space-aware [`Sache`] and an
//! entry- or weight-bounded [`BaselineCache`] that holds values strongly.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::rc::Rc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heap::{Heap, HeapError, ObjectId};
use crate::refs::{BoundSpec, EvictionMode, RefError, RefId, SpaceId};
use crate::vm::Vm;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error(transparent)]
    Ref(#[from] RefError),
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error("cache capacity must be positive")]
    ZeroCapacity,
}

pub const DEFAULT_GD_SCALE: f64 = 65536.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    Lru,
    GreedyDual { scale: f64 },
}

impl Policy {
    pub fn greedy_dual() -> Self {
        Policy::GreedyDual {
            scale: DEFAULT_GD_SCALE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Lru => "lru",
            Policy::GreedyDual { .. } => "greedy-dual",
        }
    }
}

/// GreedyDual-Size value of an entry.
pub fn greedy_dual_h(aging: f64, cost: u64, size: u64) -> f64 {
    aging + cost as f64 / size.max(1) as f64
}

pub fn greedy_dual_priority(scale: f64, h: f64) -> i64 {
    (scale * h).round() as i64
}

/// Allocated bytes and object count of everything reachable from `root`.
pub fn footprint(heap: &Heap, root: ObjectId) -> (u64, u64) {
    let set = heap.reachable_from(&BTreeSet::from([root]), &BTreeSet::new());
    (heap.bytes_of(&set), set.len() as u64)
}

#[derive(Debug, Clone)]
struct Entry {
    reference: RefId,
    root: ObjectId,
    cost: u64,
    size: u64,
    h: f64,
}

/// A cache whose entries are priority references in one space. The
/// collector decides how many entries survive; the cache only orders them.
#[derive(Debug)]
pub struct Sache<K> {
    map: IndexMap<K, Entry>,
    space: SpaceId,
    clock: Rc<Cell<i64>>,
    policy: Policy,
    aging: f64,
    epoch: u64,
}

impl<K: Clone + Eq + Hash> Sache<K> {
    pub fn new(
        vm: &mut Vm,
        bound: BoundSpec,
        policy: Policy,
        mode: EvictionMode,
    ) -> Result<Self, CacheError> {
        let space = vm.spaces_mut().new_space(bound, mode)?;
        Ok(Self::attach(vm, space, Rc::new(Cell::new(0)), policy))
    }

    /// A cache sharing an existing space and priority clock with others.
    pub fn attach(vm: &Vm, space: SpaceId, clock: Rc<Cell<i64>>, policy: Policy) -> Self {
        Sache {
            map: IndexMap::new(),
            space,
            clock,
            policy,
            aging: 0.0,
            epoch: vm.gc_count(),
        }
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }
    pub fn policy(&self) -> Policy {
        self.policy
    }
    pub fn highest_priority(&self) -> i64 {
        self.clock.get()
    }
    pub fn aging(&self) -> f64 {
        self.aging
    }
    pub fn len(&self) -> usize {
        self.map.len()
    }
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
    pub fn contains_key(&self, key: &K) -> bool {
        self.map.contains_key(key)
    }
    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.map.keys()
    }
    pub fn reference(&self, key: &K) -> Option<RefId> {
        self.map.get(key).map(|e| e.reference)
    }

    fn sync(&mut self, vm: &mut Vm) {
        if vm.gc_count() != self.epoch {
            self.update(vm);
        }
    }

    /// Drops entries whose references the collector cleared and returns
    /// their keys.
    pub fn update(&mut self, vm: &mut Vm) -> Vec<K> {
        self.epoch = vm.gc_count();
        let mut gone = Vec::new();
        let mut max_h: Option<f64> = None;
        self.map.retain(|k, e| {
            let alive = vm.spaces().deref(e.reference).ok().flatten().is_some();
            if !alive {
                let _ = vm.spaces_mut().remove_ref(e.reference);
                max_h = Some(max_h.map_or(e.h, |m: f64| m.max(e.h)));
                gone.push(k.clone());
            }
            alive
        });
        if let Some(h) = max_h {
            self.on_eviction(h);
        }
        gone
    }

    /// Inflates GreedyDual aging to the largest evicted value.
    pub fn on_eviction(&mut self, evicted_h: f64) {
        if evicted_h > self.aging {
            self.aging = evicted_h;
        }
    }

    fn next_priority(&mut self, e: &mut Entry, vm: &mut Vm) -> i64 {
        match self.policy {
            Policy::Lru => {
                self.clock.set(self.clock.get() + 1);
                self.clock.get()
            }
            Policy::GreedyDual { scale } => {
                if vm.spaces().has_gc_size(e.reference).unwrap_or(false) {
                    let s = vm.spaces_mut().get_gc_size(e.reference).unwrap_or(0);
                    if s > 0 {
                        e.size = s;
                    }
                }
                e.h = greedy_dual_h(self.aging, e.cost, e.size);
                let p = greedy_dual_priority(scale, e.h);
                self.clock.set(self.clock.get().max(p));
                p
            }
        }
    }

    pub fn get(&mut self, vm: &mut Vm, key: &K) -> Option<ObjectId> {
        self.sync(vm);
        let mut e = self.map.get(key)?.clone();
        match vm.spaces().deref(e.reference).ok().flatten() {
            Some(o) => {
                let p = self.next_priority(&mut e, vm);
                vm.spaces_mut()
                    .set_priority(e.reference, p)
                    .expect("mapped reference exists");
                self.map.insert(key.clone(), e);
                Some(o)
            }
            None => {
                let _ = vm.spaces_mut().remove_ref(e.reference);
                self.map.swap_remove(key);
                None
            }
        }
    }

    pub fn put(&mut self, vm: &mut Vm, key: K, root: ObjectId, miss_cost: u64) -> Result<(), CacheError> {
        self.sync(vm);
        if let Some(old) = self.map.get(&key).cloned() {
            let live = vm.spaces().deref(old.reference).ok().flatten();
            if live == Some(root) {
                let mut e = old;
                e.cost = miss_cost;
                let p = self.next_priority(&mut e, vm);
                vm.spaces_mut().set_priority(e.reference, p)?;
                self.map.insert(key, e);
                return Ok(());
            }
            let _ = vm.spaces_mut().remove_ref(old.reference);
            self.map.swap_remove(&key);
        }
        if !vm.heap().is_alive(root) {
            return Err(RefError::DanglingReferent(root).into());
        }
        let size = match self.policy {
            Policy::Lru => 0,
            Policy::GreedyDual { .. } => footprint(vm.heap(), root).0,
        };
        let reference = vm.new_ref(self.space, root, 0)?;
        let mut e = Entry {
            reference,
            root,
            cost: miss_cost,
            size,
            h: 0.0,
        };
        let p = self.next_priority(&mut e, vm);
        vm.spaces_mut().set_priority(reference, p)?;
        self.map.insert(key, e);
        Ok(())
    }

    pub fn remove(&mut self, vm: &mut Vm, key: &K) -> Option<ObjectId> {
        self.sync(vm);
        let e = self.map.swap_remove(key)?;
        let o = vm.spaces().deref(e.reference).ok().flatten();
        let _ = vm.spaces_mut().remove_ref(e.reference);
        debug_assert!(o.is_none() || o == Some(e.root));
        o
    }
}

/// One space and one access clock shared by several caches, so that
/// priorities are global last-access times.
#[derive(Debug, Clone)]
pub struct SoftRefPool {
    space: SpaceId,
    clock: Rc<Cell<i64>>,
}

impl SoftRefPool {
    pub fn new(vm: &mut Vm, free_fraction: f64, mode: EvictionMode) -> Result<Self, CacheError> {
        let space = vm
            .spaces_mut()
            .new_space(BoundSpec::FractionOfFree(free_fraction), mode)?;
        Ok(SoftRefPool {
            space,
            clock: Rc::new(Cell::new(0)),
        })
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    pub fn cache<K: Clone + Eq + Hash>(&self, vm: &Vm) -> Sache<K> {
        Sache::attach(vm, self.space, self.clock.clone(), Policy::Lru)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Weigher {
    #[default]
    Nodes,
    Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Entries(u64),
    Weight { max: u64, weigher: Weigher },
}

/// Strongly held values, evicted eagerly in LRU order when over capacity.
#[derive(Debug)]
pub struct BaselineCache<K> {
    map: HashMap<K, (ObjectId, u64, u64)>,
    recency: BTreeMap<u64, K>,
    capacity: Capacity,
    weight: u64,
    tick: u64,
}

impl<K: Clone + Eq + Hash> BaselineCache<K> {
    pub fn new(capacity: Capacity) -> Result<Self, CacheError> {
        let cap = match capacity {
            Capacity::Entries(n) => n,
            Capacity::Weight { max, .. } => max,
        };
        if cap == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(BaselineCache {
            map: HashMap::new(),
            recency: BTreeMap::new(),
            capacity,
            weight: 0,
            tick: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
    pub fn weight(&self) -> u64 {
        self.weight
    }
    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    /// Keys from least to most recently used.
    pub fn lru_order(&self) -> impl Iterator<Item = &K> {
        self.recency.values()
    }

    fn touch(&mut self, key: &K) {
        let e = self.map.get_mut(key).expect("touched key present");
        self.recency.remove(&e.2);
        self.tick += 1;
        e.2 = self.tick;
        self.recency.insert(self.tick, key.clone());
    }

    pub fn get(&mut self, key: &K) -> Option<ObjectId> {
        let root = self.map.get(key)?.0;
        self.touch(key);
        Some(root)
    }

    /// Inserts and evicts least-recently-used entries until within capacity.
    /// Returns the evicted keys.
    pub fn put(&mut self, vm: &mut Vm, key: K, root: ObjectId) -> Result<Vec<K>, CacheError> {
        if !vm.heap().is_alive(root) {
            return Err(HeapError::DeadObject(root).into());
        }
        self.remove(vm, &key);
        let w = match self.capacity {
            Capacity::Entries(_) => 1,
            Capacity::Weight { weigher, .. } => {
                let (bytes, nodes) = footprint(vm.heap(), root);
                match weigher {
                    Weigher::Nodes => nodes,
                    Weigher::Bytes => bytes,
                }
            }
        };
        vm.heap_mut().add_root(root)?;
        self.map.insert(key.clone(), (root, w, 0));
        self.weight += w;
        self.touch(&key);
        let limit = match self.capacity {
            Capacity::Entries(n) => n,
            Capacity::Weight { max, .. } => max,
        };
        let mut evicted = Vec::new();
        while self.weight > limit {
            let (_, k) = self.recency.pop_first().expect("over capacity implies entries");
            let (r, w, _) = self.map.remove(&k).unwrap();
            self.weight -= w;
            vm.heap_mut().remove_root(r)?;
            evicted.push(k);
        }
        Ok(evicted)
    }

    pub fn remove(&mut self, vm: &mut Vm, key: &K) -> Option<ObjectId> {
        let (r, w, t) = self.map.remove(key)?;
        self.recency.remove(&t);
        self.weight -= w;
        let _ = vm.heap_mut().remove_root(r);
        Some(r)
    }
}

/// The operations the benchmark driver needs from any cache.
pub trait KvCache {
    fn lookup(&mut self, vm: &mut Vm, key: &str) -> Option<ObjectId>;
    fn insert(&mut self, vm: &mut Vm, key: &str, root: ObjectId, miss_cost: u64) -> Result<(), CacheError>;
    fn policy_name(&self) -> String;
}

impl KvCache for Sache<String> {
    fn lookup(&mut self, vm: &mut Vm, key: &str) -> Option<ObjectId> {
        self.get(vm, &key.to_string())
    }
    fn insert(&mut self, vm: &mut Vm, key: &str, root: ObjectId, miss_cost: u64) -> Result<(), CacheError> {
        self.put(vm, key.to_string(), root, miss_cost)
    }
    fn policy_name(&self) -> String {
        format!("sache-{}", self.policy.name())
    }
}

impl KvCache for BaselineCache<String> {
    fn lookup(&mut self, _vm: &mut Vm, key: &str) -> Option<ObjectId> {
        self.get(&key.to_string())
    }
    fn insert(&mut self, vm: &mut Vm, key: &str, root: ObjectId, _miss_cost: u64) -> Result<(), CacheError> {
        self.put(vm, key.to_string(), root).map(|_| ())
    }
    fn policy_name(&self) -> String {
        "baseline-lru".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heap::Heap;

    fn vm(cap: u64) -> Vm {
        Vm::with_heap(Heap::with_capacity(cap))
    }

    fn lru(vm: &mut Vm, bound: u64) -> Sache<&'static str> {
        Sache::new(vm, BoundSpec::Fixed(bound), Policy::Lru, EvictionMode::Strict).unwrap()
    }

    #[test]
    fn invalid_fraction_rejected() {
        let mut v = vm(1 << 20);
        let r = Sache::<u32>::new(&mut v, BoundSpec::FractionOfHeap(1.5), Policy::Lru, EvictionMode::Strict);
        assert!(matches!(r, Err(CacheError::Ref(RefError::InvalidBound(_)))));
    }

    #[test]
    fn get_absent_is_none() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 1000);
        assert_eq!(s.get(&mut v, &"x"), None);
        assert_eq!(s.remove(&mut v, &"x"), None);
    }

    #[test]
    fn hit_gets_single_highest_priority() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 1000);
        let a = v.alloc(64, 0).unwrap();
        let b = v.alloc(64, 0).unwrap();
        s.put(&mut v, "a", a, 1).unwrap();
        s.put(&mut v, "b", b, 1).unwrap();
        assert_eq!(s.get(&mut v, &"a"), Some(a));
        let pa = v.spaces().priority(s.reference(&"a").unwrap()).unwrap();
        let pb = v.spaces().priority(s.reference(&"b").unwrap()).unwrap();
        assert!(pa > pb);
        assert_eq!(pa, s.highest_priority());
    }

    #[test]
    fn put_twice_keeps_one_reference() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 1000);
        let a = v.alloc(64, 0).unwrap();
        s.put(&mut v, "a", a, 1).unwrap();
        let r = s.reference(&"a").unwrap();
        s.put(&mut v, "a", a, 1).unwrap();
        assert_eq!(s.reference(&"a"), Some(r));
        let b = v.alloc(64, 0).unwrap();
        s.put(&mut v, "a", b, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(v.spaces().space(s.space()).unwrap().len(), 1);
    }

    #[test]
    fn greedy_dual_formula() {
        assert_eq!(greedy_dual_priority(1000.0, greedy_dual_h(0.0, 100, 50)), 2000);
        let mut v = vm(1 << 20);
        let mut s = Sache::new(
            &mut v,
            BoundSpec::Fixed(1000),
            Policy::GreedyDual { scale: 1000.0 },
            EvictionMode::Strict,
        )
        .unwrap();
        let a = v.alloc(48, 0).unwrap();
        s.put(&mut v, "a", a, 96).unwrap();
        assert_eq!(v.spaces().priority(s.reference(&"a").unwrap()).unwrap(), 2000);
    }

    #[test]
    fn aging_only_grows() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 10);
        assert_eq!(s.aging(), 0.0);
        s.on_eviction(3.5);
        assert_eq!(s.aging(), 3.5);
        s.on_eviction(1.0);
        assert_eq!(s.aging(), 3.5);
    }

    #[test]
    fn update_drops_cleared_entries() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 64);
        for k in ["a", "b", "c"] {
            let o = v.alloc(64, 0).unwrap();
            s.put(&mut v, k, o, 1).unwrap();
        }
        assert!(s.update(&mut v).is_empty());
        v.collect();
        let gone = s.update(&mut v);
        assert_eq!(gone.len(), 2);
        assert!(s.contains_key(&"c"));
        assert!(s.update(&mut v).is_empty());
        let live: Vec<_> = v
            .spaces()
            .iter_refs()
            .filter(|(_, r)| r.referent().is_some())
            .map(|(id, _)| id)
            .collect();
        assert_eq!(live, vec![s.reference(&"c").unwrap()]);
    }

    #[test]
    fn get_after_eviction_is_none() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 0);
        let o = v.alloc(64, 0).unwrap();
        s.put(&mut v, "a", o, 1).unwrap();
        v.collect();
        assert_eq!(s.get(&mut v, &"a"), None);
        assert!(s.is_empty());
    }

    #[test]
    fn removed_entry_is_not_sized() {
        let mut v = vm(1 << 20);
        let mut s = lru(&mut v, 1000);
        let o = v.alloc(64, 0).unwrap();
        s.put(&mut v, "a", o, 1).unwrap();
        assert_eq!(s.remove(&mut v, &"a"), Some(o));
        let st = v.collect().clone();
        assert_eq!(st.spaces[0].retained_entries, 0);
        assert!(!v.heap().is_alive(o));
    }

    #[test]
    fn soft_pool_orders_by_global_access() {
        let mut v = vm(1 << 20);
        let pool = SoftRefPool::new(&mut v, 0.5, EvictionMode::Strict).unwrap();
        let mut fast: Sache<&str> = pool.cache(&v);
        let mut slow: Sache<&str> = pool.cache(&v);
        let a = v.alloc(64, 0).unwrap();
        let b = v.alloc(64, 0).unwrap();
        slow.put(&mut v, "s", b, 1).unwrap();
        fast.put(&mut v, "f", a, 1).unwrap();
        let ps = v.spaces().priority(slow.reference(&"s").unwrap()).unwrap();
        let pf = v.spaces().priority(fast.reference(&"f").unwrap()).unwrap();
        assert!(pf > ps);
        assert_eq!(fast.space(), slow.space());
    }

    #[test]
    fn baseline_evicts_lru_first() {
        let mut v = vm(1 << 20);
        let mut c = BaselineCache::new(Capacity::Entries(2)).unwrap();
        let objs: Vec<_> = (0..3).map(|_| v.alloc(64, 0).unwrap()).collect();
        c.put(&mut v, "a", objs[0]).unwrap();
        c.put(&mut v, "b", objs[1]).unwrap();
        c.get(&"a");
        let ev = c.put(&mut v, "c", objs[2]).unwrap();
        assert_eq!(ev, vec!["b"]);
        v.collect();
        assert!(!v.heap().is_alive(objs[1]));
        assert!(v.heap().is_alive(objs[0]));
    }

    #[test]
    fn baseline_weight_by_nodes() {
        let mut v = vm(1 << 20);
        let mut c = BaselineCache::new(Capacity::Weight {
            max: 3,
            weigher: Weigher::Nodes,
        })
        .unwrap();
        let a = v.alloc(48, 2).unwrap();
        let a1 = v.alloc(48, 2).unwrap();
        v.heap_mut().set_slot(a, 0, Some(a1)).unwrap();
        let b = v.alloc(48, 2).unwrap();
        c.put(&mut v, "a", a).unwrap();
        c.put(&mut v, "b", b).unwrap();
        assert_eq!(c.weight(), 3);
        let d = v.alloc(48, 2).unwrap();
        assert_eq!(c.put(&mut v, "d", d).unwrap(), vec!["a"]);
        assert_eq!(c.weight(), 2);
    }
}
