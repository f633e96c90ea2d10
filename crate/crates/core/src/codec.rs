//! Whole-cloud encoding and decoding.

use crate::bitstream::{self, Accounting, CodedBitstream, Header};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, BLOCK64};
use crate::octree::{build_high_octree, deserialize_high_octree, serialize_high_octree};
use crate::par;
use crate::partition::{
    decode_partition, BlockStore, CodecOptions, ModelSet, PartitionTree, Partitioner, SideInfo,
};

/// Result of [`encode_cloud`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub stream: CodedBitstream,
    /// Partitioning of each 64-block, in stream order.
    pub trees: Vec<PartitionTree>,
}

impl Encoded {
    pub fn accounting(&self) -> Accounting {
        self.stream.accounting()
    }

    /// Bits reported by the partitioner: flags, modes and payloads.
    pub fn partition_bits(&self) -> u64 {
        self.trees.iter().map(|t| t.bits).sum()
    }
}

/// Encodes a cloud of depth >= 7. The 64-blocks are coded in parallel.
pub fn encode_cloud(pc: &PointCloud, models: &ModelSet, opts: CodecOptions) -> Result<Encoded> {
    opts.validate()?;
    if pc.is_empty() {
        return Err(Error::Parameter("cannot encode an empty point cloud".into()));
    }
    let (tree, grid) = build_high_octree(pc)?;
    let wanted = opts.model_sizes();
    let used: Vec<(usize, u64)> = models
        .hashes()
        .into_iter()
        .filter(|(s, _)| wanted.contains(s))
        .collect();
    let origins = grid.origins();
    let store = BlockStore::from_blocks(grid.blocks.into_iter().collect());
    let partitioner = Partitioner::new(models, opts, &store)?;
    let trees = par::map_slice(&origins, |&o| partitioner.partition(o))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut stream = CodedBitstream {
        header: Header {
            depth: pc.depth() as u8,
            options: opts,
            models: used,
        },
        octree: serialize_high_octree(&tree),
        flags: Vec::new(),
        modes: Vec::new(),
        payloads: Vec::new(),
    };
    for t in &trees {
        stream.flags.extend(t.root.flags());
        if opts.extension {
            stream.modes.extend(t.root.modes());
        }
        stream.payloads.extend(t.payloads.iter().cloned());
    }
    let bytes = bitstream::assemble(&stream)?;
    Ok(Encoded {
        bytes,
        stream,
        trees,
    })
}

/// Decodes a stream produced by [`encode_cloud`]. `models` must contain every
/// model listed in the stream header with a matching architecture hash.
pub fn decode_cloud(bytes: &[u8], models: &ModelSet) -> Result<PointCloud> {
    let s = bitstream::parse(bytes)?;
    decode_stream(&s, models)
}

pub fn decode_stream(s: &CodedBitstream, models: &ModelSet) -> Result<PointCloud> {
    let opts = s.header.options;
    let depth = s.header.depth as u32;
    let models = models.restrict(&s.header.models)?;
    let tree = deserialize_high_octree(&s.octree, depth)?;
    let origins = tree.block_origins();
    let mut store = BlockStore::new();
    let mut si = SideInfo {
        flags: s.flags.iter().copied(),
        modes: s.modes.iter().copied(),
        payloads: s.payloads.iter().map(|p| p.as_slice()),
    };
    for &o in &origins {
        decode_partition(&models, &opts, &mut store, o, &mut si)?;
        let block = store.node(o, BLOCK64);
        if block.count() == 0 {
            return Err(Error::corrupt(format!("64-block at {o:?} decoded empty")));
        }
    }
    if si.flags.next().is_some() || si.modes.next().is_some() || si.payloads.next().is_some() {
        return Err(Error::corrupt("unused side information or payloads"));
    }
    let blocks = store.into_blocks();
    if blocks.len() != origins.len() {
        return Err(Error::corrupt("decoded voxels outside the octree blocks"));
    }
    PointCloud::from_blocks(blocks.iter(), depth)
}
