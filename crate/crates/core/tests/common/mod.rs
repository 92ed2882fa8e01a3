#![allow(dead_code)]

use std::collections::BTreeSet;

use prioheap::heap::{Heap, ObjectId};
use prioheap::vm::Vm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random object graph, described independently of any heap.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub sizes: Vec<u64>,
    pub edges: Vec<Vec<Option<usize>>>,
    pub roots: Vec<usize>,
}

pub fn random_graph(rng: &mut ChaCha8Rng, max_objects: usize, max_slots: usize) -> GraphSpec {
    let n = rng.random_range(1..=max_objects);
    let sizes = (0..n).map(|_| rng.random_range(1..=300u64)).collect();
    let edges = (0..n)
        .map(|_| {
            let k = rng.random_range(0..=max_slots);
            (0..k)
                .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..n)))
                .collect()
        })
        .collect();
    let roots = (0..n).filter(|_| rng.random_bool(0.1)).collect();
    GraphSpec { sizes, edges, roots }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Allocates the graph in a fresh VM with ample capacity.
pub fn materialize(g: &GraphSpec) -> (Vm, Vec<ObjectId>) {
    let mut vm = Vm::with_heap(Heap::with_capacity(1 << 30));
    let ids: Vec<ObjectId> = g
        .sizes
        .iter()
        .zip(&g.edges)
        .map(|(&s, e)| vm.heap_mut().alloc(s, e.len()).unwrap())
        .collect();
    for (i, e) in g.edges.iter().enumerate() {
        for (k, t) in e.iter().enumerate() {
            vm.heap_mut().set_slot(ids[i], k, t.map(|t| ids[t])).unwrap();
        }
    }
    for &r in &g.roots {
        vm.heap_mut().add_root(ids[r]).unwrap();
    }
    (vm, ids)
}

/// What the root closure marks: everything reachable from the roots without
/// passing a premarked object, plus the premarked objects it runs into.
pub fn root_marked(heap: &Heap, premarked: &BTreeSet<ObjectId>) -> BTreeSet<ObjectId> {
    let roots: BTreeSet<ObjectId> = heap.roots().collect();
    let plain: BTreeSet<ObjectId> = roots.difference(premarked).copied().collect();
    let mut r = heap.reachable_from(&plain, premarked);
    r.extend(roots.intersection(premarked).copied());
    r
}

/// Bytes charged to each start in order: what it reaches that neither the
/// root closure nor an earlier start already claimed.
pub fn ordered_charges(heap: &Heap, base: &BTreeSet<ObjectId>, starts: &[ObjectId]) -> Vec<u64> {
    let mut claimed = base.clone();
    starts
        .iter()
        .map(|&s| {
            let reach = heap.reachable_from(&BTreeSet::from([s]), &claimed);
            let fresh: BTreeSet<ObjectId> = reach.difference(&claimed).copied().collect();
            let b = heap.bytes_of(&fresh);
            claimed.extend(fresh);
            b
        })
        .collect()
}

/// Checks no alive object or live reference points at a dead object.
pub fn memory_safe(vm: &Vm) -> Result<(), String> {
    vm.heap().audit().map_err(|e| e.to_string())?;
    for (r, pr) in vm.spaces().iter_refs() {
        if let Some(o) = pr.referent() {
            if !vm.heap().is_alive(o) {
                return Err(format!("{r} dereferences swept {o}"));
            }
        }
    }
    Ok(())
}
