//! Value structures: complete binary trees of fixed-size nodes.

use std::collections::BTreeSet;

use crate::heap::{Heap, HeapError, ObjectId};
use crate::vm::Vm;

pub const DEFAULT_NODE_BYTES: u64 = 48;

/// Node count whose allocated total is closest to `bytes`.
pub fn node_count(heap: &Heap, bytes: u64, node_bytes: u64) -> u64 {
    let per = heap.size_classes().allocated_size(node_bytes);
    ((bytes as f64 / per as f64).round() as u64).max(1)
}

/// Builds a tree of about `bytes` allocated bytes. The root is returned
/// still registered as a heap root so the value survives until the caller
/// hands it to a cache.
pub fn build_value(vm: &mut Vm, bytes: u64, node_bytes: u64) -> Result<ObjectId, HeapError> {
    let n = node_count(vm.heap(), bytes, node_bytes) as usize;
    let root = vm.alloc(node_bytes, 2)?;
    vm.heap_mut().add_root(root)?;
    let mut nodes = Vec::with_capacity(n);
    nodes.push(root);
    for i in 1..n {
        let o = match vm.alloc(node_bytes, 2) {
            Ok(o) => o,
            Err(e) => {
                vm.heap_mut().remove_root(root)?;
                return Err(e);
            }
        };
        vm.heap_mut().set_slot(nodes[(i - 1) / 2], (i - 1) % 2, Some(o))?;
        nodes.push(o);
    }
    Ok(root)
}

/// Visits every node of a value; returns the number visited.
pub fn visit_all(heap: &Heap, root: ObjectId) -> u64 {
    heap.reachable_from(&BTreeSet::from([root]), &BTreeSet::new())
        .len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_node_value() {
        let mut vm = Vm::with_heap(Heap::with_capacity(1 << 20));
        let r = build_value(&mut vm, 48, 48).unwrap();
        assert_eq!(visit_all(vm.heap(), r), 1);
        assert!(vm.heap().is_root(r));
    }

    #[test]
    fn hundred_nodes() {
        let mut vm = Vm::with_heap(Heap::with_capacity(1 << 20));
        let r = build_value(&mut vm, 4800, 48).unwrap();
        assert_eq!(visit_all(vm.heap(), r), 100);
        assert_eq!(vm.heap().live_bytes(), 4800);
    }

    #[test]
    fn survives_collections_mid_build() {
        let mut vm = Vm::with_heap(Heap::with_capacity(64 * 1024));
        vm.set_gc_interval(Some(1024));
        let r = build_value(&mut vm, 32 * 1024, 64).unwrap();
        assert!(vm.gc_count() > 10);
        assert_eq!(visit_all(vm.heap(), r), 512);
    }

    #[test]
    fn too_big_fails_and_unroots() {
        let mut vm = Vm::with_heap(Heap::with_capacity(4096));
        assert!(matches!(
            build_value(&mut vm, 1 << 20, 48),
            Err(HeapError::OutOfMemory { .. })
        ));
        assert_eq!(vm.heap().roots().count(), 0);
    }
}
