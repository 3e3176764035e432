use crate::error::{Error, Result};

const FIB_MULT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScratchMode {
    /// slot = local index & mask; collision-free by construction
    Direct,
    /// multiplicative hash of the local index, linear probing
    OpenAddressing,
}

/// Rank-private lookup table for one hashed adjacency row.
///
/// Keys are global vertex ids; slots are chosen from the local index
/// `id / grid_side`. A slot is live only when its generation matches the
/// table's, so clearing is a counter bump.
#[derive(Debug, Clone)]
pub struct HashScratch {
    grid_side: u64,
    mask: u64,
    shift: u32,
    keys: Vec<u64>,
    generations: Vec<u32>,
    generation: u32,
    mode: ScratchMode,
    min_key: u64,
    len: usize,
}

impl HashScratch {
    /// Capacity is the next power of two ≥ 2 × `longest_row` (at least 2),
    /// which keeps open addressing at load factor ≤ 0.5.
    pub fn new(longest_row: usize, grid_side: u64) -> Self {
        let capacity = (2 * longest_row).max(2).next_power_of_two();
        HashScratch {
            grid_side,
            mask: capacity as u64 - 1,
            shift: 64 - capacity.trailing_zeros(),
            keys: vec![0; capacity],
            generations: vec![0; capacity],
            generation: 0,
            mode: ScratchMode::OpenAddressing,
            min_key: u64::MAX,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.keys.len()
    }

    pub fn mode(&self) -> ScratchMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Smallest key loaded, `u64::MAX` when empty.
    pub fn min_key(&self) -> u64 {
        self.min_key
    }

    fn reset(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.generations.iter_mut().for_each(|g| *g = 0);
            self.generation = 1;
        }
        self.len = 0;
        self.min_key = u64::MAX;
    }

    fn home(&self, local: u64) -> usize {
        match self.mode {
            ScratchMode::Direct => (local & self.mask) as usize,
            ScratchMode::OpenAddressing => (local.wrapping_mul(FIB_MULT) >> self.shift) as usize,
        }
    }

    /// Replaces the contents with `row`, the sorted `U` row of vertex
    /// `row_id`. Every key must exceed `row_id`. Direct mode is used when
    /// allowed and the row's local-index span fits the table.
    pub fn load(&mut self, row_id: u64, row: &[u64], allow_direct: bool) -> Result<ScratchMode> {
        if row.len() > self.capacity() / 2 {
            return Err(Error::Internal(format!(
                "row of {} entries exceeds scratch capacity {}",
                row.len(),
                self.capacity()
            )));
        }
        if let Some(&first) = row.first() {
            if first <= row_id {
                return Err(Error::Internal(format!(
                    "hashed row {row_id} holds key {first}, not above the row id"
                )));
            }
        }
        self.reset();
        let span = match (row.first(), row.last()) {
            (Some(a), Some(b)) => b / self.grid_side - a / self.grid_side + 1,
            _ => 0,
        };
        self.mode = if allow_direct && span <= self.capacity() as u64 {
            ScratchMode::Direct
        } else {
            ScratchMode::OpenAddressing
        };
        for &key in row {
            let mut slot = self.home(key / self.grid_side);
            while self.generations[slot] == self.generation {
                if self.keys[slot] == key {
                    break;
                }
                if self.mode == ScratchMode::Direct {
                    return Err(Error::Internal(format!(
                        "keys {} and {key} share a local index",
                        self.keys[slot]
                    )));
                }
                slot = (slot + 1) & self.mask as usize;
            }
            if self.generations[slot] != self.generation {
                self.generations[slot] = self.generation;
                self.keys[slot] = key;
                self.len += 1;
            }
        }
        self.min_key = row.first().copied().unwrap_or(u64::MAX);
        Ok(self.mode)
    }

    /// Whether `key` is loaded, and how many extra slots were inspected.
    pub fn lookup(&self, key: u64) -> (bool, u64) {
        let mut slot = self.home(key / self.grid_side);
        if self.mode == ScratchMode::Direct {
            return (self.generations[slot] == self.generation && self.keys[slot] == key, 0);
        }
        let mut extra = 0;
        while self.generations[slot] == self.generation {
            if self.keys[slot] == key {
                return (true, extra);
            }
            slot = (slot + 1) & self.mask as usize;
            extra += 1;
        }
        (false, extra)
    }
}
