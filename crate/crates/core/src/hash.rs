//! Open-addressing spatial hash over integer voxel coordinates.
//!
//! Linear probing, power-of-two capacity, load factor kept at or below 1/2.
//! Keys are never removed, so no tombstones are needed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelCoord(pub [i32; 3]);

impl VoxelCoord {
    pub fn offset(self, d: [i32; 3]) -> Option<VoxelCoord> {
        Some(VoxelCoord([
            self.0[0].checked_add(d[0])?,
            self.0[1].checked_add(d[1])?,
            self.0[2].checked_add(d[2])?,
        ]))
    }
}

const EMPTY: u32 = u32::MAX;
const MIN_CAPACITY: usize = 16;
const Z_RUN_BITS: u32 = 2;
const Z_RUN: usize = 1 << Z_RUN_BITS;

#[derive(Debug, Clone, Copy)]
struct Slot {
    key: [i32; 3],
    value: u32,
}

const VACANT: Slot = Slot { key: [0; 3], value: EMPTY };

#[inline]
fn zigzag(v: i32) -> u64 {
    ((v << 1) ^ (v >> 31)) as u32 as u64
}

#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 64-bit hash of a voxel coordinate.
#[inline]
pub fn hash_coord(key: VoxelCoord) -> u64 {
    let [x, y, z] = key.0;
    let packed = zigzag(x) | (zigzag(y) << 32);
    mix64(packed ^ mix64(zigzag(z).wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Debug, Clone)]
pub struct SpatialHashTable {
    slots: Vec<Slot>,
    shift: u32,
    len: usize,
}

impl Default for SpatialHashTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SpatialHashTable {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    /// Table sized so that `n` inserts never trigger a rehash.
    pub fn with_capacity(n: usize) -> Self {
        let capacity = (2 * n).next_power_of_two().max(MIN_CAPACITY);
        Self { slots: vec![VACANT; capacity], shift: 64 - capacity.trailing_zeros(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn load_factor(&self) -> f64 {
        self.len as f64 / self.slots.len() as f64
    }

    /// Runs of `Z_RUN` z-consecutive cells share a hashed base slot and sit in
    /// adjacent slots, so a window query touches one cache line per column.
    #[inline]
    fn home(&self, key: VoxelCoord) -> usize {
        let [x, y, z] = key.0;
        let column = VoxelCoord([x, y, z >> Z_RUN_BITS]);
        let base = (hash_coord(column).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> (self.shift + Z_RUN_BITS)) as usize;
        (base << Z_RUN_BITS) | (z & (Z_RUN as i32 - 1)) as usize
    }

    pub fn insert(&mut self, key: VoxelCoord, idx: usize) -> Result<()> {
        assert!(idx < EMPTY as usize, "voxel index {idx} exceeds table range");
        if 2 * (self.len + 1) > self.slots.len() {
            self.grow();
        }
        let mask = self.slots.len() - 1;
        let mut pos = self.home(key);
        loop {
            let slot = &mut self.slots[pos];
            if slot.value == EMPTY {
                *slot = Slot { key: key.0, value: idx as u32 };
                self.len += 1;
                return Ok(());
            }
            if slot.key == key.0 {
                return Err(Error::DuplicateKey(key.0));
            }
            pos = (pos + 1) & mask;
        }
    }

    fn grow(&mut self) {
        let capacity = 2 * self.slots.len().max(MIN_CAPACITY / 2);
        let old = std::mem::replace(&mut self.slots, vec![VACANT; capacity]);
        self.shift = 64 - self.slots.len().trailing_zeros();
        let mask = self.slots.len() - 1;
        for slot in old.into_iter().filter(|s| s.value != EMPTY) {
            let mut pos = self.home(VoxelCoord(slot.key));
            while self.slots[pos].value != EMPTY {
                pos = (pos + 1) & mask;
            }
            self.slots[pos] = slot;
        }
    }

    #[inline]
    pub fn lookup(&self, key: VoxelCoord) -> Option<usize> {
        self.lookup_counted(key).0
    }

    /// Lookup that also reports how many slots were inspected.
    pub fn lookup_counted(&self, key: VoxelCoord) -> (Option<usize>, usize) {
        let mask = self.slots.len() - 1;
        let mut pos = self.home(key);
        let mut probes = 1;
        loop {
            let slot = &self.slots[pos];
            if slot.value == EMPTY {
                return (None, probes);
            }
            if slot.key == key.0 {
                return (Some(slot.value as usize), probes);
            }
            pos = (pos + 1) & mask;
            probes += 1;
        }
    }

    /// All stored `(key, index)` pairs in slot order.
    pub fn entries(&self) -> impl Iterator<Item = (VoxelCoord, usize)> + '_ {
        self.slots.iter().filter(|s| s.value != EMPTY).map(|s| (VoxelCoord(s.key), s.value as usize))
    }
}
