use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

const BLOB_MAGIC: u32 = u32::from_le_bytes(*b"DCSR");
pub const BLOB_VERSION: u32 = 1;
const HEADER_WORDS: usize = 8;
pub const BLOB_HEADER_BYTES: usize = HEADER_WORDS * 8;

/// Position `(x, y)` of a rank on the `side × side` grid; rank id is
/// `x * side + y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize)]
pub struct GridCoord {
    pub x: u64,
    pub y: u64,
}

impl GridCoord {
    pub fn new(x: u64, y: u64) -> Self {
        GridCoord { x, y }
    }

    pub fn from_rank(rank: usize, side: u64) -> Self {
        let rank = rank as u64;
        GridCoord {
            x: rank / side,
            y: rank % side,
        }
    }

    pub fn rank(self, side: u64) -> usize {
        (self.x * side + self.y) as usize
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Orientation {
    /// majors are rows, minors are columns
    RowMajor,
    /// majors are columns, minors are rows
    ColumnMajor,
}

/// Which triangle of the adjacency matrix a block holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Triangle {
    /// column > row
    Upper,
    /// row > column
    Lower,
}

/// One rank's cyclic block of `U` or `L`, stored doubly sparse.
///
/// Entry `(row, col)` belongs to the block at `coord` iff
/// `row % side == coord.x` and `col % side == coord.y`. Majors are indexed
/// locally by `global / side`; only majors with at least one entry are
/// listed in `present_majors`. Minors are global ids, ascending per major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcsrBlock {
    pub grid_side: u64,
    pub coord: GridCoord,
    pub orientation: Orientation,
    pub triangle: Triangle,
    /// vertex count of the whole graph
    pub n: u64,
    pub present_majors: Vec<u64>,
    /// `present_majors.len() + 1` extents into `minors`
    pub offsets: Vec<u64>,
    pub minors: Vec<u64>,
}

impl DcsrBlock {
    pub fn empty(
        grid_side: u64,
        coord: GridCoord,
        orientation: Orientation,
        triangle: Triangle,
        n: u64,
    ) -> Self {
        DcsrBlock {
            grid_side,
            coord,
            orientation,
            triangle,
            n,
            present_majors: Vec::new(),
            offsets: vec![0],
            minors: Vec::new(),
        }
    }

    /// Builds a block from `(row, col)` matrix entries. Duplicates are
    /// removed; every entry must satisfy the residue and triangle rules.
    pub fn from_entries(
        grid_side: u64,
        coord: GridCoord,
        orientation: Orientation,
        triangle: Triangle,
        n: u64,
        entries: impl IntoIterator<Item = (u64, u64)>,
    ) -> Result<Self> {
        let mut pairs: Vec<(u64, u64)> = entries
            .into_iter()
            .map(|(row, col)| match orientation {
                Orientation::RowMajor => (row, col),
                Orientation::ColumnMajor => (col, row),
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();

        let mut block = DcsrBlock::empty(grid_side, coord, orientation, triangle, n);
        block.minors.reserve(pairs.len());
        for (major, minor) in pairs {
            let local = major / grid_side;
            if block.present_majors.last() != Some(&local) {
                if !block.present_majors.is_empty() {
                    block.offsets.push(block.minors.len() as u64);
                }
                block.present_majors.push(local);
            }
            block.minors.push(minor);
        }
        if !block.present_majors.is_empty() {
            block.offsets.push(block.minors.len() as u64);
        }
        block.validate()?;
        Ok(block)
    }

    pub fn nnz(&self) -> usize {
        self.minors.len()
    }

    pub fn num_present(&self) -> usize {
        self.present_majors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minors.is_empty()
    }

    /// Residue class shared by all majors.
    pub fn major_residue(&self) -> u64 {
        match self.orientation {
            Orientation::RowMajor => self.coord.x,
            Orientation::ColumnMajor => self.coord.y,
        }
    }

    /// Residue class shared by all minors.
    pub fn minor_residue(&self) -> u64 {
        match self.orientation {
            Orientation::RowMajor => self.coord.y,
            Orientation::ColumnMajor => self.coord.x,
        }
    }

    pub fn global_major(&self, local: u64) -> u64 {
        local * self.grid_side + self.major_residue()
    }

    /// Number of local major slots a dense CSR of this block would need.
    pub fn local_major_span(&self) -> u64 {
        let r = self.major_residue();
        if self.n <= r {
            0
        } else {
            (self.n - r).div_ceil(self.grid_side)
        }
    }

    /// Minors of the `idx`-th present major.
    pub fn lane(&self, idx: usize) -> &[u64] {
        &self.minors[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }

    /// Minors of a major given by global id; empty if absent.
    pub fn find(&self, global_major: u64) -> &[u64] {
        let local = global_major / self.grid_side;
        match self.present_majors.binary_search(&local) {
            Ok(idx) => self.lane(idx),
            Err(_) => &[],
        }
    }

    /// `(global major, minors)` for each present major, ascending.
    pub fn majors(&self) -> impl Iterator<Item = (u64, &[u64])> + '_ {
        self.present_majors
            .iter()
            .enumerate()
            .map(move |(idx, &local)| (self.global_major(local), self.lane(idx)))
    }

    /// All entries as `(row, col)`.
    pub fn entries(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let orientation = self.orientation;
        self.majors().flat_map(move |(major, minors)| {
            minors.iter().map(move |&minor| match orientation {
                Orientation::RowMajor => (major, minor),
                Orientation::ColumnMajor => (minor, major),
            })
        })
    }

    /// The same entries stored in the other orientation.
    pub fn reoriented(&self, orientation: Orientation) -> Self {
        if orientation == self.orientation {
            return self.clone();
        }
        DcsrBlock::from_entries(
            self.grid_side,
            self.coord,
            orientation,
            self.triangle,
            self.n,
            self.entries(),
        )
        .expect("reorienting a valid block keeps it valid")
    }

    /// Checks every structural invariant of the block.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Decode(msg));
        let side = self.grid_side;
        if side == 0 {
            return bad("grid side is zero".into());
        }
        if self.coord.x >= side || self.coord.y >= side {
            return bad(format!("coord {} outside a {side}x{side} grid", self.coord));
        }
        if self.offsets.len() != self.present_majors.len() + 1 || self.offsets[0] != 0 {
            return bad("offset array does not match present majors".into());
        }
        if *self.offsets.last().unwrap() != self.minors.len() as u64 {
            return bad("final offset does not match entry count".into());
        }
        if self.present_majors.windows(2).any(|w| w[0] >= w[1]) {
            return bad("present majors are not strictly increasing".into());
        }
        if self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("a listed major has no entries".into());
        }
        let major_residue = self.major_residue();
        let minor_residue = self.minor_residue();
        for (major, minors) in self.majors() {
            if major >= self.n {
                return bad(format!("major {major} outside [0, {})", self.n));
            }
            if minors.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("minors of major {major} are not strictly increasing"));
            }
            debug_assert_eq!(major % side, major_residue);
            for &minor in minors {
                if minor >= self.n || minor % side != minor_residue {
                    return bad(format!(
                        "minor {minor} of major {major} violates residue {minor_residue}"
                    ));
                }
                let (row, col) = match self.orientation {
                    Orientation::RowMajor => (major, minor),
                    Orientation::ColumnMajor => (minor, major),
                };
                let ok = match self.triangle {
                    Triangle::Upper => col > row,
                    Triangle::Lower => row > col,
                };
                if !ok {
                    return bad(format!("entry ({row}, {col}) not in {:?} triangle", self.triangle));
                }
            }
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        let np = self.present_majors.len();
        let offsets = if np == 0 { 0 } else { np + 1 };
        BLOB_HEADER_BYTES + 8 * (np + offsets + self.minors.len())
    }

    /// Serializes into one contiguous little-endian buffer: an 8-word
    /// header followed by present majors, offsets and minors. Offsets are
    /// omitted for an empty block.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut buf);
        buf
    }

    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        let layout = match self.orientation {
            Orientation::RowMajor => 0u64,
            Orientation::ColumnMajor => 1,
        } | match self.triangle {
            Triangle::Upper => 0u64,
            Triangle::Lower => 2,
        };
        let header = [
            u64::from(BLOB_MAGIC) | (u64::from(BLOB_VERSION) << 32),
            self.grid_side,
            self.coord.x,
            self.coord.y,
            layout,
            self.n,
            self.present_majors.len() as u64,
            self.minors.len() as u64,
        ];
        let words = header.iter().chain(&self.present_majors);
        for w in words {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        if !self.present_majors.is_empty() {
            for w in &self.offsets {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
        for w in &self.minors {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }

    /// Inverse of [`DcsrBlock::encode`]; the buffer must hold exactly one
    /// block.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (block, used) = DcsrBlock::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Decode(format!(
                "{} trailing bytes after block",
                bytes.len() - used
            )));
        }
        Ok(block)
    }

    /// Decodes one block from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < BLOB_HEADER_BYTES {
            return Err(Error::Decode(format!(
                "buffer of {} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
        let tag = word(0);
        if tag as u32 != BLOB_MAGIC {
            return Err(Error::Decode("bad block magic".into()));
        }
        let version = (tag >> 32) as u32;
        if version != BLOB_VERSION {
            return Err(Error::Decode(format!(
                "block version {version}, expected {BLOB_VERSION}"
            )));
        }
        let layout = word(4);
        if layout > 3 {
            return Err(Error::Decode(format!("unknown layout word {layout}")));
        }
        let np = word(6);
        let ne = word(7);
        let n_offsets = if np == 0 { 0 } else { np + 1 };
        let body_words = np
            .checked_add(n_offsets)
            .and_then(|w| w.checked_add(ne))
            .filter(|&w| w <= ((bytes.len() - BLOB_HEADER_BYTES) / 8) as u64)
            .ok_or_else(|| Error::Decode("buffer truncated".into()))? as usize;
        let used = BLOB_HEADER_BYTES + body_words * 8;
        let read = |start: usize, len: usize| -> Vec<u64> {
            bytes[start..start + len * 8]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let (np, ne) = (np as usize, ne as usize);
        let mut at = BLOB_HEADER_BYTES;
        let present_majors = read(at, np);
        at += np * 8;
        let offsets = if np == 0 {
            vec![0]
        } else {
            let o = read(at, np + 1);
            at += (np + 1) * 8;
            o
        };
        let minors = read(at, ne);
        let block = DcsrBlock {
            grid_side: word(1),
            coord: GridCoord::new(word(2), word(3)),
            orientation: if layout & 1 == 0 {
                Orientation::RowMajor
            } else {
                Orientation::ColumnMajor
            },
            triangle: if layout & 2 == 0 {
                Triangle::Upper
            } else {
                Triangle::Lower
            },
            n: word(5),
            present_majors,
            offsets,
            minors,
        };
        block.validate()?;
        Ok((block, used))
    }
}
