//! Binary min-heap with a position index so entries can be re-prioritized or
//! removed by key in `O(log n)`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[derive(Debug, Clone)]
pub struct IndexedMinHeap<K> {
    slots: Vec<(f64, K)>,
    pos: BTreeMap<K, usize>,
}

impl<K: Ord + Copy> Default for IndexedMinHeap<K> {
    fn default() -> Self {
        Self { slots: Vec::new(), pos: BTreeMap::new() }
    }
}

fn less<K: Ord>(a: &(f64, K), b: &(f64, K)) -> bool {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)) == Ordering::Less
}

impl<K: Ord + Copy> IndexedMinHeap<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.pos.contains_key(key)
    }

    pub fn priority(&self, key: &K) -> Option<f64> {
        self.pos.get(key).map(|&i| self.slots[i].0)
    }

    pub fn peek(&self) -> Option<(f64, K)> {
        self.slots.first().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, K)> {
        self.slots.iter()
    }

    /// Inserts `key`, or re-prioritizes it if already present.
    pub fn push(&mut self, key: K, priority: f64) {
        if let Some(&i) = self.pos.get(&key) {
            self.slots[i].0 = priority;
            self.restore(i);
            return;
        }
        self.slots.push((priority, key));
        let i = self.slots.len() - 1;
        self.pos.insert(key, i);
        self.sift_up(i);
    }

    pub fn pop(&mut self) -> Option<(f64, K)> {
        if self.slots.is_empty() {
            return None;
        }
        let top = self.slots[0];
        self.remove_at(0);
        Some(top)
    }

    pub fn remove(&mut self, key: &K) -> Option<f64> {
        let i = *self.pos.get(key)?;
        let p = self.slots[i].0;
        self.remove_at(i);
        Some(p)
    }

    fn remove_at(&mut self, i: usize) {
        let last = self.slots.len() - 1;
        self.swap(i, last);
        let (_, key) = self.slots.pop().expect("non-empty");
        self.pos.remove(&key);
        if i < self.slots.len() {
            self.restore(i);
        }
    }

    fn restore(&mut self, i: usize) {
        let i = self.sift_up(i);
        self.sift_down(i);
    }

    fn swap(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.slots.swap(a, b);
        self.pos.insert(self.slots[a].1, a);
        self.pos.insert(self.slots[b].1, b);
    }

    fn sift_up(&mut self, mut i: usize) -> usize {
        while i > 0 {
            let parent = (i - 1) / 2;
            if less(&self.slots[i], &self.slots[parent]) {
                self.swap(i, parent);
                i = parent;
            } else {
                break;
            }
        }
        i
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.slots.len();
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut smallest = i;
            if l < n && less(&self.slots[l], &self.slots[smallest]) {
                smallest = l;
            }
            if r < n && less(&self.slots[r], &self.slots[smallest]) {
                smallest = r;
            }
            if smallest == i {
                return;
            }
            self.swap(i, smallest);
            i = smallest;
        }
    }
}
