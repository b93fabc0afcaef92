//! Connected-component labeling on binary voxel masks.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::Mask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "18")]
    Eighteen,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::Config(format!("connectivity must be 6, 18 or 26, got {n}"))),
        }
    }

    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_l1 = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let l1 = dz.abs() + dy.abs() + dx.abs();
                    if l1 > 0 && l1 <= max_l1 {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Labels `1..=count` in order of each component's first voxel in raster
/// order; background is 0.
pub fn connected_components(mask: &Mask, conn: Connectivity) -> (Vec<u32>, usize) {
    let [d, h, w] = mask.shape;
    let offs = conn.offsets();
    let mut labels = vec![0u32; mask.data.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = ((i / (h * w)) as isize, ((i / w) % h) as isize, (i % w) as isize);
            for o in &offs {
                let (nz, ny, nx) = (z + o[0], y + o[1], x + o[2]);
                if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = (nz as usize * h + ny as usize) * w + nx as usize;
                if mask.data[j] && labels[j] == 0 {
                    labels[j] = count;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, count as usize)
}
