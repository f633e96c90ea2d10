//! Point clouds, voxelization, dense occupancy blocks and density measurement.

mod augment;
pub mod ply;
pub mod synth;

use std::collections::BTreeMap;

pub use augment::{augment, AugmentParams};

use crate::error::{Error, Result};

/// Integer voxel coordinate `[x, y, z]`.
pub type Voxel = [u32; 3];

/// Side of the blocks the codec works on below the high-level octree.
pub const BLOCK64: usize = 64;

/// Real-valued cloud as read from disk, before voxelization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawPointCloud {
    pub points: Vec<[f64; 3]>,
}

impl RawPointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Parameter(format!("non-finite coordinate {p:?}")));
        }
        Ok(RawPointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl From<&PointCloud> for RawPointCloud {
    fn from(pc: &PointCloud) -> Self {
        RawPointCloud {
            points: pc
                .points()
                .iter()
                .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
                .collect(),
        }
    }
}

/// Voxelized cloud on a `2^depth` grid.
///
/// Points are kept sorted in raster order (x slowest, z fastest) and unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointCloud {
    points: Vec<Voxel>,
    depth: u32,
}

impl PointCloud {
    pub const MAX_DEPTH: u32 = 21;

    pub fn new(mut points: Vec<Voxel>, depth: u32) -> Result<Self> {
        if depth == 0 || depth > Self::MAX_DEPTH {
            return Err(Error::UnsupportedDepth {
                depth,
                msg: "depth must be in 1..=21",
            });
        }
        let limit = 1u32 << depth;
        if let Some(p) = points.iter().find(|p| p.iter().any(|&c| c >= limit)) {
            return Err(Error::Parameter(format!(
                "coordinate {p:?} outside a depth-{depth} grid"
            )));
        }
        points.sort_unstable();
        points.dedup();
        Ok(PointCloud { points, depth })
    }

    pub fn points(&self) -> &[Voxel] {
        &self.points
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Splits the cloud into occupied blocks of `side`, keyed by block origin.
    ///
    /// Map order is ascending raster order of the origins.
    pub fn blocks(&self, side: usize) -> BTreeMap<Voxel, VoxelBlock> {
        let s = side as u32;
        let mut out: BTreeMap<Voxel, VoxelBlock> = BTreeMap::new();
        for p in &self.points {
            let origin = [p[0] / s * s, p[1] / s * s, p[2] / s * s];
            out.entry(origin)
                .or_insert_with(|| VoxelBlock::new(side))
                .set(
                    (p[0] - origin[0]) as usize,
                    (p[1] - origin[1]) as usize,
                    (p[2] - origin[2]) as usize,
                    true,
                );
        }
        out
    }

    /// Inverse of [`PointCloud::blocks`].
    pub fn from_blocks<'a>(
        blocks: impl IntoIterator<Item = (&'a Voxel, &'a VoxelBlock)>,
        depth: u32,
    ) -> Result<Self> {
        let mut points = Vec::new();
        for (origin, block) in blocks {
            points.extend(block.points().into_iter().map(|p| {
                [
                    origin[0] + p[0],
                    origin[1] + p[1],
                    origin[2] + p[2],
                ]
            }));
        }
        PointCloud::new(points, depth)
    }
}

/// Dense binary occupancy cube of side `d`, stored in raster order.
///
/// Raster index `i = x*d*d + y*d + z` (zero-based).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VoxelBlock {
    side: usize,
    occ: Vec<u8>,
}

impl std::fmt::Debug for VoxelBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VoxelBlock")
            .field("side", &self.side)
            .field("occupied", &self.count())
            .finish()
    }
}

impl VoxelBlock {
    pub fn new(side: usize) -> Self {
        VoxelBlock {
            side,
            occ: vec![0; side * side * side],
        }
    }

    /// Builds a block from points with coordinates in `[0, side)`.
    pub fn from_points(side: usize, points: &[Voxel]) -> Result<Self> {
        let mut b = VoxelBlock::new(side);
        for p in points {
            if p.iter().any(|&c| c as usize >= side) {
                return Err(Error::Parameter(format!(
                    "point {p:?} outside a block of side {side}"
                )));
            }
            b.set(p[0] as usize, p[1] as usize, p[2] as usize, true);
        }
        Ok(b)
    }

    pub fn from_bits(side: usize, occ: Vec<u8>) -> Result<Self> {
        if occ.len() != side * side * side {
            return Err(Error::Shape(format!(
                "{} occupancy values for a block of side {side}",
                occ.len()
            )));
        }
        if occ.iter().any(|&v| v > 1) {
            return Err(Error::Parameter("occupancy values must be 0 or 1".into()));
        }
        Ok(VoxelBlock { side, occ })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.occ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occ.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.side + y) * self.side + z
    }

    #[inline]
    pub fn coord(&self, i: usize) -> [usize; 3] {
        let d = self.side;
        [i / (d * d), (i / d) % d, i % d]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occ[self.index(x, y, z)] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.occ[i] = v as u8;
    }

    /// Occupancy values (0/1) in raster order.
    pub fn bits(&self) -> &[u8] {
        &self.occ
    }

    pub fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.occ
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&v| v != 0).count()
    }

    /// Occupied coordinates in raster order.
    pub fn points(&self) -> Vec<Voxel> {
        self.occ
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| {
                let c = self.coord(i);
                [c[0] as u32, c[1] as u32, c[2] as u32]
            })
            .collect()
    }

    /// Copies out the sub-cube of side `side` at `origin`.
    pub fn sub_block(&self, origin: [usize; 3], side: usize) -> VoxelBlock {
        let mut out = VoxelBlock::new(side);
        for x in 0..side {
            for y in 0..side {
                let src = self.index(origin[0] + x, origin[1] + y, origin[2]);
                let dst = out.index(x, y, 0);
                out.occ[dst..dst + side].copy_from_slice(&self.occ[src..src + side]);
            }
        }
        out
    }
}

/// Quantizes a raw cloud onto a `2^depth` grid.
///
/// Each axis is shifted by its minimum, then all axes are scaled by one factor
/// so the largest extent maps to `2^depth - 1`, rounded half-up and deduplicated.
/// A cloud with zero extent collapses to the origin.
pub fn voxelize(rpc: &RawPointCloud, depth: u32) -> Result<PointCloud> {
    if rpc.is_empty() {
        return Err(Error::Parameter("cannot voxelize an empty cloud".into()));
    }
    if depth == 0 || depth > PointCloud::MAX_DEPTH {
        return Err(Error::UnsupportedDepth {
            depth,
            msg: "depth must be in 1..=21",
        });
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in &rpc.points {
        for a in 0..3 {
            if !p[a].is_finite() {
                return Err(Error::Parameter(format!("non-finite coordinate {p:?}")));
            }
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0f64, f64::max);
    let top = ((1u64 << depth) - 1) as f64;
    let scale = if extent > 0.0 { top / extent } else { 0.0 };
    let points = rpc
        .points
        .iter()
        .map(|p| {
            let mut v = [0u32; 3];
            for a in 0..3 {
                let q = ((p[a] - min[a]) * scale + 0.5).floor();
                v[a] = q.clamp(0.0, top) as u32;
            }
            v
        })
        .collect();
    PointCloud::new(points, depth)
}

/// Local density: mean percentage of occupied voxels over the occupied 64-blocks.
pub fn local_density(pc: &PointCloud) -> Result<f64> {
    if pc.is_empty() {
        return Err(Error::UndefinedDensity);
    }
    let mut counts: BTreeMap<Voxel, u64> = BTreeMap::new();
    for p in pc.points() {
        *counts.entry([p[0] >> 6, p[1] >> 6, p[2] >> 6]).or_default() += 1;
    }
    let volume = (BLOCK64 * BLOCK64 * BLOCK64) as f64;
    let sum: f64 = counts.values().map(|&c| 100.0 * c as f64 / volume).sum();
    Ok(sum / counts.len() as f64)
}
