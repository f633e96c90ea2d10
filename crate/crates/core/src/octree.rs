//! Octree over the cloud down to 64-blocks.

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Voxel, VoxelBlock, BLOCK64};

/// Levels of the high octree for a depth-`n` cloud.
pub fn high_levels(depth: u32) -> Result<u32> {
    if !(7..=PointCloud::MAX_DEPTH).contains(&depth) {
        return Err(Error::UnsupportedDepth {
            depth,
            msg: "the high-level octree needs 7 <= depth <= 21",
        });
    }
    Ok(depth - 6)
}

/// Occupancy bytes of the octree above the 64-blocks, breadth first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HighOctree {
    depth: u32,
    levels: Vec<Vec<u8>>,
}

/// Occupied 64-blocks in ascending raster order of their origins.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BlockGrid {
    pub blocks: Vec<(Voxel, VoxelBlock)>,
}

impl BlockGrid {
    pub fn origins(&self) -> Vec<Voxel> {
        self.blocks.iter().map(|b| b.0).collect()
    }
}

/// Interleaves block coordinates, x bit first at each level.
fn morton(b: [u32; 3], levels: u32) -> u64 {
    let mut code = 0u64;
    for l in (0..levels).rev() {
        let bx = (b[0] >> l) & 1;
        let by = (b[1] >> l) & 1;
        let bz = (b[2] >> l) & 1;
        code = (code << 3) | (4 * bx + 2 * by + bz) as u64;
    }
    code
}

fn unmorton(code: u64, levels: u32) -> [u32; 3] {
    let mut b = [0u32; 3];
    for l in 0..levels {
        let o = (code >> (3 * l)) & 7;
        b[0] |= (((o >> 2) & 1) as u32) << l;
        b[1] |= (((o >> 1) & 1) as u32) << l;
        b[2] |= ((o & 1) as u32) << l;
    }
    b
}

impl HighOctree {
    /// Octree whose leaves are the given 64-block origins.
    pub fn from_origins(origins: &[Voxel], depth: u32) -> Result<Self> {
        let levels = high_levels(depth)?;
        let mut codes: Vec<u64> = origins
            .iter()
            .map(|o| morton([o[0] >> 6, o[1] >> 6, o[2] >> 6], levels))
            .collect();
        codes.sort_unstable();
        codes.dedup();
        let mut out = Vec::with_capacity(levels as usize);
        for k in 0..levels {
            let shift = 3 * (levels - k - 1);
            let mut bytes: Vec<u8> = Vec::new();
            let mut parent = None;
            for &c in &codes {
                let p = c >> (shift + 3);
                let octant = (c >> shift) & 7;
                if parent != Some(p) {
                    bytes.push(0);
                    parent = Some(p);
                }
                *bytes.last_mut().unwrap() |= 0x80 >> octant;
            }
            out.push(bytes);
        }
        Ok(HighOctree { depth, levels: out })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn level_bytes(&self) -> &[Vec<u8>] {
        &self.levels
    }

    /// 64-block origins at the leaves, in ascending raster order.
    pub fn block_origins(&self) -> Vec<Voxel> {
        let levels = self.levels.len() as u32;
        let mut codes = vec![0u64];
        for bytes in &self.levels {
            let mut next = Vec::new();
            for (&c, &b) in codes.iter().zip(bytes) {
                for o in 0..8u64 {
                    if b & (0x80 >> o) != 0 {
                        next.push((c << 3) | o);
                    }
                }
            }
            codes = next;
        }
        let mut origins: Vec<Voxel> = codes
            .into_iter()
            .map(|c| {
                let b = unmorton(c, levels);
                [b[0] << 6, b[1] << 6, b[2] << 6]
            })
            .collect();
        origins.sort_unstable();
        origins
    }
}

/// Splits a cloud of depth >= 7 into the high octree and its occupied 64-blocks.
pub fn build_high_octree(pc: &PointCloud) -> Result<(HighOctree, BlockGrid)> {
    let map = pc.blocks(BLOCK64);
    let origins: Vec<Voxel> = map.keys().copied().collect();
    let tree = HighOctree::from_origins(&origins, pc.depth())?;
    Ok((
        tree,
        BlockGrid {
            blocks: map.into_iter().collect(),
        },
    ))
}

/// Concatenated level bytes, no compression.
pub fn serialize_high_octree(t: &HighOctree) -> Vec<u8> {
    t.levels.concat()
}

/// Inverse of [`serialize_high_octree`]; `bytes` must be consumed exactly.
pub fn deserialize_high_octree(bytes: &[u8], depth: u32) -> Result<HighOctree> {
    let levels = high_levels(depth)?;
    let mut pos = 0usize;
    let mut nodes = 1usize;
    let mut out = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let end = pos + nodes;
        let level = bytes
            .get(pos..end)
            .ok_or_else(|| Error::corrupt("octree segment truncated"))?;
        if level.contains(&0) {
            return Err(Error::corrupt("octree node without children"));
        }
        nodes = level.iter().map(|b| b.count_ones() as usize).sum();
        out.push(level.to_vec());
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::corrupt("trailing bytes after octree"));
    }
    Ok(HighOctree { depth, levels: out })
}
