//! Hilbert curve indexing of grid cells.
//!
//! The curve orientation is fixed so that the order-1 traversal visits
//! `(0,0) -> (0,1) -> (1,1) -> (1,0)` in `(col, row)` coordinates. Any other
//! orientation would serve equally well; the only property the PLS search
//! relies on is that consecutive values land on grid-adjacent cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported curve order (a `2^31 x 2^31` grid still fits in `u64`).
pub const MAX_ORDER: u32 = 31;

/// Position of a cell along the Hilbert curve, in `[0, 4^order)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HilbertValue(pub u64);

fn check_order(order: u32) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidParameter(format!(
            "hilbert order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    Ok(())
}

/// Maps a grid cell to its Hilbert value.
pub fn hilbert_value(col: u32, row: u32, order: u32) -> Result<HilbertValue> {
    check_order(order)?;
    let side = 1u64 << order;
    if u64::from(col) >= side || u64::from(row) >= side {
        return Err(Error::InvalidParameter(format!(
            "cell ({col},{row}) outside {side}x{side} grid"
        )));
    }
    let (mut x, mut y) = (u64::from(col), u64::from(row));
    let mut d = 0u64;
    let mut s = side / 2;
    while s > 0 {
        let rx = u64::from(x & s != 0);
        let ry = u64::from(y & s != 0);
        d += s * s * ((3 * rx) ^ ry);
        rotate(side, &mut x, &mut y, rx, ry);
        s /= 2;
    }
    Ok(HilbertValue(d))
}

/// Inverse of [`hilbert_value`]: returns `(col, row)`.
pub fn hilbert_cell(value: HilbertValue, order: u32) -> Result<(u32, u32)> {
    check_order(order)?;
    let side = 1u64 << order;
    if value.0 >= side * side {
        return Err(Error::InvalidParameter(format!(
            "hilbert value {} outside order {order}",
            value.0
        )));
    }
    let mut t = value.0;
    let (mut x, mut y) = (0u64, 0u64);
    let mut s = 1u64;
    while s < side {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        rotate(s, &mut x, &mut y, rx, ry);
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    Ok((x as u32, y as u32))
}

fn rotate(n: u64, x: &mut u64, y: &mut u64, rx: u64, ry: u64) {
    if ry == 0 {
        if rx == 1 {
            *x = n - 1 - *x;
            *y = n - 1 - *y;
        }
        std::mem::swap(x, y);
    }
}

/// Position of each location (by index) in the Hilbert-sorted sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankTable {
    rank: Vec<usize>,
    by_rank: Vec<usize>,
}

impl RankTable {
    /// Builds ranks from per-location Hilbert values. Values must be distinct.
    pub fn from_values(values: &[HilbertValue]) -> Self {
        let mut by_rank: Vec<usize> = (0..values.len()).collect();
        by_rank.sort_by_key(|&i| values[i]);
        let mut rank = vec![0; values.len()];
        for (r, &i) in by_rank.iter().enumerate() {
            rank[i] = r;
        }
        RankTable { rank, by_rank }
    }

    pub fn rank(&self, index: usize) -> usize {
        self.rank[index]
    }

    /// Location index holding rank `r`.
    pub fn at(&self, r: usize) -> usize {
        self.by_rank[r]
    }

    /// Location indices in Hilbert order.
    pub fn order(&self) -> &[usize] {
        &self.by_rank
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }
}
