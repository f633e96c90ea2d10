//! Rate-driven partitioning of 64-blocks and context extension.
//!
//! A node is either coded as one block or split into its eight octants,
//! whichever costs fewer bits including side information. Every coded block
//! picks the cheapest context size from its row of [`ExtensionTable`].
//!
//! The voxels known to the decoder when a node is reached are those of all
//! earlier 64-blocks plus those of earlier octant cells of the current block.
//! That set depends only on the node's position, and it contains every voxel
//! of the node's extended context, so encoder and decoder build identical
//! contexts no matter which decisions were taken elsewhere.

use std::collections::BTreeMap;

use crate::coder::{ArithDecoder, ArithEncoder};
use crate::error::{Error, Result};
use crate::geometry::{Voxel, VoxelBlock, BLOCK64};
use crate::model::{IncrementalEval, Plan, VoxelDnn};
use crate::nn::{Region, Tensor};
use crate::par;

/// Deepest allowed partitioning level (block 4).
pub const MAX_LEVEL: u8 = 5;

/// Bits per partition flag and per extension mode.
pub const FLAG_BITS: u64 = 2;
pub const MODE_BITS: u64 = 2;

/// Trained models by block size.
#[derive(Default)]
pub struct ModelSet {
    models: BTreeMap<usize, VoxelDnn>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a model, replacing any previous model of the same size.
    pub fn insert(&mut self, net: VoxelDnn) {
        self.models.insert(net.block_size(), net);
    }

    pub fn with(mut self, net: VoxelDnn) -> Self {
        self.insert(net);
        self
    }

    pub fn get(&self, size: usize) -> Option<&VoxelDnn> {
        self.models.get(&size)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    /// `(block size, architecture hash)` of every model, ascending by size.
    pub fn hashes(&self) -> Vec<(usize, u64)> {
        self.models
            .iter()
            .map(|(&s, m)| (s, m.arch_hash()))
            .collect()
    }

    /// Only the models listed, each checked against its hash.
    pub fn restrict(&self, wanted: &[(usize, u64)]) -> Result<ModelSet> {
        let mut out = ModelSet::new();
        for &(size, hash) in wanted {
            let m = self.get(size).ok_or(Error::MissingModel(size))?;
            let have = m.arch_hash();
            if have != hash {
                return Err(Error::IncompatibleWeights(format!(
                    "model {size} has hash {have:016x}, stream expects {hash:016x}"
                )));
            }
            out.insert(m.clone());
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecOptions {
    /// 1 codes whole 64-blocks, 5 allows splitting down to block 4.
    pub max_lv: u8,
    pub extension: bool,
    /// Small blocks are embedded in an empty 64-block and coded with the 64 model.
    pub single_model: bool,
}

impl Default for CodecOptions {
    fn default() -> Self {
        CodecOptions {
            max_lv: MAX_LEVEL,
            extension: true,
            single_model: false,
        }
    }
}

impl CodecOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LEVEL).contains(&self.max_lv) {
            return Err(Error::Config(format!(
                "maxLv must be in 1..={MAX_LEVEL}, got {}",
                self.max_lv
            )));
        }
        if self.extension && self.single_model {
            return Err(Error::Config(
                "context extension and single-model mode are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    pub fn mode_bits(&self) -> u64 {
        if self.extension {
            MODE_BITS
        } else {
            0
        }
    }

    /// Model sizes a stream coded with these options may refer to.
    pub fn model_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = (1..=self.max_lv)
            .flat_map(|lv| placements(level_side(lv), self))
            .map(|p| p.model_size())
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

/// Side of a node at partitioning level `lv` (level 1 is the 64-block).
pub fn level_side(lv: u8) -> usize {
    BLOCK64 >> (lv - 1)
}

/// Context sizes available to a block of each side.
pub struct ExtensionTable;

impl ExtensionTable {
    pub fn row(side: usize) -> &'static [usize] {
        match side {
            64 => &[128, 64],
            32 => &[64, 32],
            16 => &[64, 32, 16],
            8 => &[64, 32, 16, 8],
            _ => &[],
        }
    }
}

/// Where a coded block sits inside its model's input cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Block at the maximal corner of a cube of this size, surrounded by
    /// already decoded voxels.
    MaxCorner(usize),
    /// Block at the origin corner of an otherwise empty cube of this size.
    OriginCorner(usize),
}

impl Placement {
    pub fn model_size(&self) -> usize {
        match *self {
            Placement::MaxCorner(d) | Placement::OriginCorner(d) => d,
        }
    }

    /// Node box in the model cube's coordinates.
    pub fn target(&self, side: usize) -> Region {
        let s = side as i64;
        match *self {
            Placement::MaxCorner(d) => {
                let d = d as i64;
                Region::new([d - s; 3], [d; 3])
            }
            Placement::OriginCorner(_) => Region::cube(side),
        }
    }

    /// Global coordinate of the model cube's origin.
    fn cube_origin(&self, origin: Voxel, side: usize) -> [i64; 3] {
        let o = origin.map(|v| v as i64);
        match *self {
            Placement::MaxCorner(d) => o.map(|v| v + side as i64 - d as i64),
            Placement::OriginCorner(_) => o,
        }
    }
}

/// Candidate placements for a block of `side`; the mode index is the position
/// in this list.
pub fn placements(side: usize, opts: &CodecOptions) -> Vec<Placement> {
    if opts.single_model {
        return vec![if side >= BLOCK64 {
            Placement::MaxCorner(side)
        } else {
            Placement::OriginCorner(BLOCK64)
        }];
    }
    if side == 4 {
        return vec![Placement::OriginCorner(8)];
    }
    if opts.extension {
        ExtensionTable::row(side)
            .iter()
            .map(|&d| Placement::MaxCorner(d))
            .collect()
    } else {
        vec![Placement::MaxCorner(side)]
    }
}

/// Occupancy of coded or decoded voxels, stored as 64-blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockStore {
    blocks: BTreeMap<Voxel, VoxelBlock>,
}

impl BlockStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_blocks(blocks: BTreeMap<Voxel, VoxelBlock>) -> Self {
        BlockStore { blocks }
    }

    pub fn into_blocks(self) -> BTreeMap<Voxel, VoxelBlock> {
        self.blocks
    }

    pub fn blocks(&self) -> &BTreeMap<Voxel, VoxelBlock> {
        &self.blocks
    }

    fn block_at(&self, p: [i64; 3]) -> Option<(&VoxelBlock, [usize; 3])> {
        if p.iter().any(|&v| v < 0 || v > u32::MAX as i64) {
            return None;
        }
        let b = BLOCK64 as i64;
        let origin = p.map(|v| (v / b * b) as u32);
        self.blocks
            .get(&origin)
            .map(|blk| (blk, [0, 1, 2].map(|k| (p[k] - origin[k] as i64) as usize)))
    }

    pub fn get(&self, p: [i64; 3]) -> bool {
        self.block_at(p)
            .is_some_and(|(blk, [x, y, z])| blk.get(x, y, z))
    }

    fn set(&mut self, p: Voxel, v: bool) {
        let b = BLOCK64 as u32;
        let origin = p.map(|c| c / b * b);
        self.blocks
            .entry(origin)
            .or_insert_with(|| VoxelBlock::new(BLOCK64))
            .set(
                (p[0] - origin[0]) as usize,
                (p[1] - origin[1]) as usize,
                (p[2] - origin[2]) as usize,
                v,
            );
    }

    /// Occupancy of a node box. Nodes never straddle 64-blocks.
    pub fn node(&self, origin: Voxel, side: usize) -> VoxelBlock {
        let b = BLOCK64 as u32;
        let bo = origin.map(|c| c / b * b);
        match self.blocks.get(&bo) {
            Some(blk) => blk.sub_block(
                [0, 1, 2].map(|k| (origin[k] - bo[k]) as usize),
                side,
            ),
            None => VoxelBlock::new(side),
        }
    }

    /// Single-channel occupancy over `region`, in coordinates relative to `shift`.
    fn context(&self, shift: [i64; 3], region: Region) -> Tensor {
        let mut t = Tensor::zeros(1, region);
        let b = BLOCK64 as i64;
        for x in region.lo[0]..region.hi[0] {
            for y in region.lo[1]..region.hi[1] {
                let gx = x + shift[0];
                let gy = y + shift[1];
                let mut z = region.lo[2];
                while z < region.hi[2] {
                    let gz = z + shift[2];
                    // Run of z within one 64-block.
                    let run_end = ((gz.div_euclid(b) + 1) * b - shift[2]).min(region.hi[2]);
                    if let Some((blk, [lx, ly, lz])) = self.block_at([gx, gy, gz]) {
                        for k in 0..(run_end - z) as usize {
                            if blk.get(lx, ly, lz + k) {
                                t.at_mut([x, y, z + k as i64])[0] = 1.0;
                            }
                        }
                    }
                    z = run_end;
                }
            }
        }
        t
    }
}

fn model_for(models: &ModelSet, placement: Placement) -> Result<&VoxelDnn> {
    let size = placement.model_size();
    models.get(size).ok_or(Error::MissingModel(size))
}

fn prepare(
    net: &VoxelDnn,
    store: &BlockStore,
    origin: Voxel,
    side: usize,
    placement: Placement,
) -> (Plan, Tensor) {
    let d = net.block_size();
    let target = placement.target(side);
    let plan = Plan::new(net, Region::cube(d), target);
    let input = plan.input_region();
    let x = match placement {
        Placement::MaxCorner(_) => store.context(placement.cube_origin(origin, side), input),
        Placement::OriginCorner(_) => {
            let node = store.node(origin, side);
            let mut t = Tensor::zeros(1, input);
            for i in 0..node.len() {
                if node.bits()[i] != 0 {
                    t.at_mut(node.coord(i).map(|v| v as i64))[0] = 1.0;
                }
            }
            t
        }
    };
    (plan, x)
}

/// Arithmetic-codes the node `[origin, origin + side)` with `placement`,
/// taking both the node and its context from `store`. Returns the payload and
/// its length in bits.
pub fn encode_single_block(
    models: &ModelSet,
    store: &BlockStore,
    origin: Voxel,
    side: usize,
    placement: Placement,
) -> Result<(Vec<u8>, u64)> {
    let net = model_for(models, placement)?;
    if placement.model_size() < side {
        return Err(Error::Config(format!(
            "model {} cannot code block {side}",
            placement.model_size()
        )));
    }
    let (plan, x) = prepare(net, store, origin, side, placement);
    let probs = net.predict_region(&x, &plan)?;
    let node = store.node(origin, side);
    let mut enc = ArithEncoder::new();
    for (&bit, &p1) in node.bits().iter().zip(&probs) {
        enc.encode(bit != 0, p1)?;
    }
    enc.finish()
}

/// Decodes a node coded by [`encode_single_block`] and writes it into `store`.
pub fn decode_single_block(
    models: &ModelSet,
    store: &mut BlockStore,
    origin: Voxel,
    side: usize,
    placement: Placement,
    payload: &[u8],
) -> Result<()> {
    let net = model_for(models, placement)?;
    let (plan, x) = prepare(net, store, origin, side, placement);
    let mut dec = ArithDecoder::new(payload)?;
    let mut bits = vec![0u8; side * side * side];
    IncrementalEval::new(net, plan, x)?.run(|i, p1| {
        let b = dec.decode(p1)?;
        bits[i] = b as u8;
        Ok(b)
    })?;
    let node = VoxelBlock::from_bits(side, bits)?;
    for p in node.points() {
        store.set([origin[0] + p[0], origin[1] + p[1], origin[2] + p[2]], true);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartitionNode {
    /// Flag 0.
    Empty,
    /// Flag 1, with the chosen placement's mode index.
    Leaf { mode: u8 },
    /// Flag 2, children in octant order.
    Split(Box<[PartitionNode; 8]>),
}

impl PartitionNode {
    pub fn flag(&self) -> u8 {
        match self {
            PartitionNode::Empty => 0,
            PartitionNode::Leaf { .. } => 1,
            PartitionNode::Split(_) => 2,
        }
    }

    /// Flags in depth-first pre-order.
    pub fn flags(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.walk(&mut |n| out.push(n.flag()));
        out
    }

    /// Mode indices of coded leaves, in leaf order.
    pub fn modes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let PartitionNode::Leaf { mode } = n {
                out.push(*mode)
            }
        });
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.modes().len()
    }

    pub fn depth(&self) -> usize {
        match self {
            PartitionNode::Split(c) => 1 + c.iter().map(|n| n.depth()).max().unwrap_or(0),
            _ => 1,
        }
    }

    fn walk(&self, f: &mut impl FnMut(&PartitionNode)) {
        f(self);
        if let PartitionNode::Split(children) = self {
            for c in children.iter() {
                c.walk(f);
            }
        }
    }
}

/// Partitioning of one 64-block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionTree {
    pub root: PartitionNode,
    /// Payloads of the coded leaves, in leaf order.
    pub payloads: Vec<Vec<u8>>,
    /// Flags, modes and payloads, in bits.
    pub bits: u64,
}

impl PartitionTree {
    pub fn payload_bits(&self) -> u64 {
        self.payloads.iter().map(|p| 8 * p.len() as u64).sum()
    }
}

/// Octant `o` of a node, as (origin, side).
pub fn child(origin: Voxel, side: usize, o: usize) -> (Voxel, usize) {
    let h = (side / 2) as u32;
    (
        [
            origin[0] + ((o >> 2) & 1) as u32 * h,
            origin[1] + ((o >> 1) & 1) as u32 * h,
            origin[2] + (o & 1) as u32 * h,
        ],
        side / 2,
    )
}

/// Cheapest coding of a node as one block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingleChoice {
    pub mode: u8,
    pub placement: Placement,
    pub payload: Vec<u8>,
    pub payload_bits: u64,
}

/// The encoder side of the partitioning search.
pub struct Partitioner<'a> {
    models: &'a ModelSet,
    opts: CodecOptions,
    store: &'a BlockStore,
}

impl<'a> Partitioner<'a> {
    /// `store` holds the whole cloud being coded.
    pub fn new(models: &'a ModelSet, opts: CodecOptions, store: &'a BlockStore) -> Result<Self> {
        opts.validate()?;
        Ok(Partitioner {
            models,
            opts,
            store,
        })
    }

    /// Tries every available placement; `None` if no model covers the node.
    pub fn best_single(&self, origin: Voxel, side: usize) -> Result<Option<SingleChoice>> {
        let cands: Vec<(u8, Placement)> = placements(side, &self.opts)
            .into_iter()
            .enumerate()
            .filter(|(_, p)| self.models.get(p.model_size()).is_some())
            .map(|(i, p)| (i as u8, p))
            .collect();
        let coded = par::map_slice(&cands, |&(mode, placement)| {
            encode_single_block(self.models, self.store, origin, side, placement).map(
                |(payload, payload_bits)| SingleChoice {
                    mode,
                    placement,
                    payload,
                    payload_bits,
                },
            )
        });
        let mut best: Option<SingleChoice> = None;
        for c in coded {
            let c = c?;
            if best.as_ref().is_none_or(|b| c.payload_bits < b.payload_bits) {
                best = Some(c);
            }
        }
        Ok(best)
    }

    /// Partitions the 64-block at `origin`.
    pub fn partition(&self, origin: Voxel) -> Result<PartitionTree> {
        self.partition_node(origin, BLOCK64, 1)
    }

    /// Best coding of the node at `level`; its bit count includes the node's
    /// own flag.
    pub fn partition_node(&self, origin: Voxel, side: usize, level: u8) -> Result<PartitionTree> {
        if self.store.node(origin, side).count() == 0 {
            return Ok(PartitionTree {
                root: PartitionNode::Empty,
                payloads: Vec::new(),
                bits: FLAG_BITS,
            });
        }
        let single = self.best_single(origin, side)?.map(|c| {
            let bits = FLAG_BITS + self.opts.mode_bits() + c.payload_bits;
            PartitionTree {
                root: PartitionNode::Leaf { mode: c.mode },
                payloads: vec![c.payload],
                bits,
            }
        });
        if level >= self.opts.max_lv || side <= 4 {
            return single.ok_or(Error::MissingModel(side));
        }
        let split = self.split_candidate(origin, side, level)?;
        Ok(match single {
            Some(s) if split.bits >= s.bits => s,
            _ => split,
        })
    }

    /// The node coded as flag 2 followed by its eight best-coded children.
    pub fn split_candidate(&self, origin: Voxel, side: usize, level: u8) -> Result<PartitionTree> {
        let mut children = Vec::with_capacity(8);
        let mut payloads = Vec::new();
        let mut bits = FLAG_BITS;
        for o in 0..8 {
            let (co, cs) = child(origin, side, o);
            let t = self.partition_node(co, cs, level + 1)?;
            bits += t.bits;
            payloads.extend(t.payloads);
            children.push(t.root);
        }
        let children: [PartitionNode; 8] = children.try_into().expect("eight children");
        Ok(PartitionTree {
            root: PartitionNode::Split(Box::new(children)),
            payloads,
            bits,
        })
    }
}

/// Decoder inputs for one 64-block, consumed in stream order.
pub struct SideInfo<'s, F, M, P>
where
    F: Iterator<Item = u8>,
    M: Iterator<Item = u8>,
    P: Iterator<Item = &'s [u8]>,
{
    pub flags: F,
    pub modes: M,
    pub payloads: P,
}

/// Decodes the 64-block at `origin` into `store`, which must already hold
/// every earlier block.
pub fn decode_partition<'s, F, M, P>(
    models: &ModelSet,
    opts: &CodecOptions,
    store: &mut BlockStore,
    origin: Voxel,
    side_info: &mut SideInfo<'s, F, M, P>,
) -> Result<PartitionNode>
where
    F: Iterator<Item = u8>,
    M: Iterator<Item = u8>,
    P: Iterator<Item = &'s [u8]>,
{
    opts.validate()?;
    let root = decode_node(models, opts, store, origin, BLOCK64, 1, side_info)?;
    if root == PartitionNode::Empty {
        return Err(Error::corrupt("occupied 64-block flagged empty"));
    }
    Ok(root)
}

fn decode_node<'s, F, M, P>(
    models: &ModelSet,
    opts: &CodecOptions,
    store: &mut BlockStore,
    origin: Voxel,
    side: usize,
    level: u8,
    si: &mut SideInfo<'s, F, M, P>,
) -> Result<PartitionNode>
where
    F: Iterator<Item = u8>,
    M: Iterator<Item = u8>,
    P: Iterator<Item = &'s [u8]>,
{
    let flag = si
        .flags
        .next()
        .ok_or_else(|| Error::corrupt("flag stream exhausted"))?;
    match flag {
        0 => Ok(PartitionNode::Empty),
        1 => {
            let options = placements(side, opts);
            let mode = if opts.extension {
                si.modes
                    .next()
                    .ok_or_else(|| Error::corrupt("mode stream exhausted"))?
            } else {
                0
            };
            let placement = *options
                .get(mode as usize)
                .ok_or_else(|| Error::corrupt(format!("mode {mode} invalid for block {side}")))?;
            if models.get(placement.model_size()).is_none() {
                return Err(Error::corrupt(format!(
                    "block {side} coded with unavailable model {}",
                    placement.model_size()
                )));
            }
            let payload = si
                .payloads
                .next()
                .ok_or_else(|| Error::corrupt("payload list exhausted"))?;
            decode_single_block(models, store, origin, side, placement, payload)?;
            Ok(PartitionNode::Leaf { mode })
        }
        2 => {
            if level >= opts.max_lv || side <= 4 {
                return Err(Error::corrupt("split below the deepest level"));
            }
            let mut children = Vec::with_capacity(8);
            for o in 0..8 {
                let (co, cs) = child(origin, side, o);
                children.push(decode_node(models, opts, store, co, cs, level + 1, si)?);
            }
            let children: [PartitionNode; 8] = children.try_into().expect("eight children");
            Ok(PartitionNode::Split(Box::new(children)))
        }
        f => Err(Error::corrupt(format!("invalid partition flag {f}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use crate::model::VoxelDnnConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(d: usize, seed: u64) -> VoxelDnn {
        let mut c = VoxelDnnConfig::desk(d);
        c.filters = 4;
        c.head_width = 4;
        c.first_kernel = 3;
        VoxelDnn::new(c, seed).unwrap()
    }

    fn models(sizes: &[usize]) -> ModelSet {
        let mut m = ModelSet::new();
        for &s in sizes {
            m.insert(tiny(s, s as u64));
        }
        m
    }

    fn store_of(points: Vec<Voxel>, n: u32) -> BlockStore {
        BlockStore::from_blocks(PointCloud::new(points, n).unwrap().blocks(BLOCK64))
    }

    fn random_points(rng: &mut ChaCha8Rng, lo: u32, hi: u32, count: usize) -> Vec<Voxel> {
        (0..count)
            .map(|_| [0; 3].map(|_: u32| rng.random_range(lo..hi)))
            .collect()
    }

    fn decode_block(
        models: &ModelSet,
        opts: &CodecOptions,
        store: &mut BlockStore,
        origin: Voxel,
        tree: &PartitionTree,
    ) -> Result<PartitionNode> {
        let mut si = SideInfo {
            flags: tree.root.flags().into_iter(),
            modes: tree.root.modes().into_iter(),
            payloads: tree.payloads.iter().map(|p| p.as_slice()),
        };
        decode_partition(models, opts, store, origin, &mut si)
    }

    #[test]
    fn extension_rows() {
        assert_eq!(ExtensionTable::row(64), &[128, 64]);
        assert_eq!(ExtensionTable::row(8), &[64, 32, 16, 8]);
        assert!(ExtensionTable::row(8).len() <= 4);
        let opts = CodecOptions::default();
        assert_eq!(placements(4, &opts), vec![Placement::OriginCorner(8)]);
        let single = CodecOptions {
            extension: false,
            single_model: true,
            ..opts
        };
        assert_eq!(placements(16, &single), vec![Placement::OriginCorner(64)]);
        assert_eq!(single.model_sizes(), vec![64]);
        assert_eq!(opts.model_sizes(), vec![8, 16, 32, 64, 128]);
    }

    #[test]
    fn options_validated() {
        let bad = CodecOptions {
            extension: true,
            single_model: true,
            max_lv: 2,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let deep = CodecOptions {
            max_lv: 6,
            ..CodecOptions::default()
        };
        assert!(matches!(deep.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn context_matches_pointwise_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let store = store_of(random_points(&mut rng, 0, 200, 3000), 8);
        let shift = [50, -7, 61];
        let region = Region::new([0, 3, 1], [30, 40, 80]);
        let t = store.context(shift, region);
        for i in 0..region.volume() {
            let p = region.point(i);
            let g = [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]];
            assert_eq!(t.at(p)[0] == 1.0, store.get(g), "{p:?}");
        }
    }

    #[test]
    fn single_block_roundtrip_all_placements() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 40, 90, 4000);
        let store = store_of(pts, 7);
        let ms = models(&[8, 16, 32, 64]);
        let origin = [72, 64, 80];
        for placement in [
            Placement::MaxCorner(8),
            Placement::MaxCorner(16),
            Placement::MaxCorner(32),
            Placement::OriginCorner(8),
        ] {
            let side = if placement == Placement::OriginCorner(8) { 4 } else { 8 };
            let (payload, bits) = encode_single_block(&ms, &store, origin, side, placement).unwrap();
            assert_eq!(bits, 8 * payload.len() as u64);
            // Decoder store: everything but the node itself.
            let mut dec = store.clone();
            for p in store.node(origin, side).points() {
                dec.set([origin[0] + p[0], origin[1] + p[1], origin[2] + p[2]], false);
            }
            decode_single_block(&ms, &mut dec, origin, side, placement, &payload).unwrap();
            assert_eq!(dec.node(origin, side), store.node(origin, side), "{placement:?}");
        }
    }

    #[test]
    fn no_extension_context_is_block_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ms = models(&[16]);
        let inside = random_points(&mut rng, 16, 32, 300);
        let mut outside = inside.clone();
        outside.extend(random_points(&mut rng, 0, 16, 300));
        let a = encode_single_block(&ms, &store_of(inside, 7), [16; 3], 16, Placement::MaxCorner(16));
        let b = encode_single_block(&ms, &store_of(outside, 7), [16; 3], 16, Placement::MaxCorner(16));
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn missing_model() {
        let store = store_of(vec![[1, 2, 3]], 7);
        let ms = models(&[8]);
        assert!(matches!(
            encode_single_block(&ms, &store, [0; 3], 16, Placement::MaxCorner(16)),
            Err(Error::MissingModel(16))
        ));
        let opts = CodecOptions {
            max_lv: 2,
            extension: false,
            single_model: false,
        };
        let p = Partitioner::new(&ms, opts, &store).unwrap();
        assert!(matches!(p.partition([0; 3]), Err(Error::MissingModel(32))));
    }

    #[test]
    fn forced_split_without_large_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = store_of(random_points(&mut rng, 0, 20, 200), 7);
        let ms = models(&[8, 16]);
        let opts = CodecOptions {
            max_lv: 3,
            extension: false,
            single_model: false,
        };
        let tree = Partitioner::new(&ms, opts, &store).unwrap().partition([0; 3]).unwrap();
        assert_eq!(tree.root.flag(), 2);
        assert_eq!(tree.root.depth(), 3);
        let mut dec = BlockStore::new();
        decode_block(&ms, &opts, &mut dec, [0; 3], &tree).unwrap();
        assert_eq!(dec.node([0; 3], 64), store.node([0; 3], 64));
    }

    #[test]
    fn one_voxel_two_candidate_audit() {
        let store = store_of(vec![[40, 3, 50]], 7);
        let ms = models(&[32, 64]);
        let opts = CodecOptions {
            max_lv: 2,
            extension: false,
            single_model: false,
        };
        let p = Partitioner::new(&ms, opts, &store).unwrap();
        let single = p.best_single([0; 3], 64).unwrap().unwrap();
        let (payload, _) =
            encode_single_block(&ms, &store, [32, 0, 32], 32, Placement::MaxCorner(32)).unwrap();
        let c1 = 2 + single.payload_bits;
        let c2 = 9 * 2 + 8 * payload.len() as u64;
        let tree = p.partition([0; 3]).unwrap();
        assert_eq!(tree.bits, c1.min(c2));
        assert_eq!(tree.root.flag() == 2, c2 < c1);
        if c2 < c1 {
            assert_eq!(tree.root.flags(), vec![2, 0, 0, 0, 0, 0, 1, 0, 0]);
        }
    }

    #[test]
    fn partition_roundtrip_and_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ms = models(&[8, 16, 32, 64]);
        for (k, opts) in [
            CodecOptions { max_lv: 3, extension: true, single_model: false },
            CodecOptions { max_lv: 5, extension: false, single_model: false },
            CodecOptions { max_lv: 4, extension: false, single_model: true },
        ]
        .into_iter()
        .enumerate()
        {
            let mut pts = random_points(&mut rng, 0, 128, 400);
            pts.extend(random_points(&mut rng, 64, 84, 2000));
            let store = store_of(pts, 7);
            let origin = [64; 3];
            let p = Partitioner::new(&ms, opts, &store).unwrap();
            let tree = p.partition(origin).unwrap();
            let flags = tree.root.flags();
            let modes = tree.root.modes();
            assert_eq!(
                tree.bits,
                2 * flags.len() as u64 + opts.mode_bits() * modes.len() as u64 + tree.payload_bits(),
                "case {k}"
            );
            assert_eq!(modes.len(), tree.payloads.len());
            let mut dec = store.clone();
            dec.blocks.remove(&origin);
            decode_block(&ms, &opts, &mut dec, origin, &tree).unwrap();
            assert_eq!(dec, store, "case {k}");
        }
    }

    #[test]
    fn corrupt_flags() {
        let ms = models(&[8, 16, 32, 64]);
        let opts = CodecOptions {
            max_lv: 2,
            extension: false,
            single_model: false,
        };
        let mut store = BlockStore::new();
        for flags in [vec![3u8], vec![], vec![0], vec![2, 2]] {
            let mut si = SideInfo {
                flags: flags.into_iter(),
                modes: std::iter::empty(),
                payloads: std::iter::empty(),
            };
            assert!(matches!(
                decode_partition(&ms, &opts, &mut store, [0; 3], &mut si),
                Err(Error::CorruptStream(_))
            ));
        }
        let mut si = SideInfo {
            flags: vec![1u8].into_iter(),
            modes: std::iter::empty(),
            payloads: std::iter::empty(),
        };
        assert!(matches!(
            decode_partition(&ms, &opts, &mut store, [0; 3], &mut si),
            Err(Error::CorruptStream(_))
        ));
    }

    #[test]
    fn all_empty_subtree() {
        let ms = models(&[32]);
        let opts = CodecOptions {
            max_lv: 2,
            extension: false,
            single_model: false,
        };
        let mut store = BlockStore::new();
        let mut si = SideInfo {
            flags: vec![2u8, 0, 0, 0, 0, 0, 0, 0, 0].into_iter(),
            modes: std::iter::empty(),
            payloads: std::iter::empty(),
        };
        let root = decode_partition(&ms, &opts, &mut store, [0; 3], &mut si).unwrap();
        assert_eq!(root.flags().len(), 9);
        assert_eq!(store.node([0; 3], 64).count(), 0);
    }
}
