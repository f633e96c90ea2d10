//! Container for a coded cloud. See FORMAT.md for the normative layout.

use crate::error::{Error, Result};
use crate::partition::{CodecOptions, FLAG_BITS, MAX_LEVEL, MODE_BITS};

pub const MAGIC: [u8; 4] = *b"VXPC";
pub const VERSION: u16 = 1;

const FLAG_EXTENSION: u8 = 1;
const FLAG_SINGLE_MODEL: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub depth: u8,
    pub options: CodecOptions,
    /// `(block size, architecture hash)` of each model the decoder needs.
    pub models: Vec<(usize, u64)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedBitstream {
    pub header: Header,
    pub octree: Vec<u8>,
    /// Partition flags (0, 1 or 2), all blocks, depth-first pre-order.
    pub flags: Vec<u8>,
    /// Extension modes of coded leaves; empty unless extension is enabled.
    pub modes: Vec<u8>,
    pub payloads: Vec<Vec<u8>>,
}

/// Size of every part of a serialized stream, in bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accounting {
    /// Fixed header and model list.
    pub header_bits: u64,
    /// Segment lengths, payload count and length prefixes, padding.
    pub framing_bits: u64,
    pub octree_bits: u64,
    pub flag_bits: u64,
    pub mode_bits: u64,
    pub payload_bits: u64,
}

impl Accounting {
    pub fn total(&self) -> u64 {
        self.header_bits
            + self.framing_bits
            + self.octree_bits
            + self.flag_bits
            + self.mode_bits
            + self.payload_bits
    }

    /// Everything except the arithmetic-coded payloads.
    pub fn side_info_bits(&self) -> u64 {
        self.total() - self.payload_bits
    }
}

fn leb128_len(mut v: u64) -> u64 {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

fn pad_bits(bits: u64) -> u64 {
    (8 - bits % 8) % 8
}

/// Packs 2-bit fields MSB-first.
pub fn pack2(values: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; values.len().div_ceil(4)];
    for (i, &v) in values.iter().enumerate() {
        out[i / 4] |= (v & 3) << (6 - 2 * (i % 4));
    }
    out
}

pub fn unpack2(bytes: &[u8], count: usize) -> Vec<u8> {
    (0..count)
        .map(|i| (bytes[i / 4] >> (6 - 2 * (i % 4))) & 3)
        .collect()
}

impl CodedBitstream {
    pub fn accounting(&self) -> Accounting {
        let header_bits = 8 * (4 + 2 + 1 + 1 + 1 + 1 + 9 * self.header.models.len() as u64);
        let flag_bits = FLAG_BITS * self.flags.len() as u64;
        let mode_bits = MODE_BITS * self.modes.len() as u64;
        let prefixes: u64 = self
            .payloads
            .iter()
            .map(|p| leb128_len(p.len() as u64))
            .sum();
        let framing_bits = 8 * (4 + 4 + 4 + 4 + prefixes) + pad_bits(flag_bits) + pad_bits(mode_bits);
        Accounting {
            header_bits,
            framing_bits,
            octree_bits: 8 * self.octree.len() as u64,
            flag_bits,
            mode_bits,
            payload_bits: self.payloads.iter().map(|p| 8 * p.len() as u64).sum(),
        }
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Parameter(format!("{what} too long for the container")))
}

/// Serializes a stream.
pub fn assemble(s: &CodedBitstream) -> Result<Vec<u8>> {
    if s.payloads.is_empty() {
        return Err(Error::Parameter("a stream needs at least one coded block".into()));
    }
    if s.flags.iter().chain(&s.modes).any(|&v| v > 3) {
        return Err(Error::Parameter("flag or mode value exceeds 2 bits".into()));
    }
    if s.header.models.len() > u8::MAX as usize {
        return Err(Error::Parameter("too many models".into()));
    }
    let h = &s.header;
    let mut out = Vec::with_capacity(s.accounting().total().div_ceil(8) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(h.depth);
    out.push(h.options.max_lv);
    let mut flags = 0u8;
    if h.options.extension {
        flags |= FLAG_EXTENSION;
    }
    if h.options.single_model {
        flags |= FLAG_SINGLE_MODEL;
    }
    out.push(flags);
    out.push(h.models.len() as u8);
    for &(size, hash) in &h.models {
        if !size.is_power_of_two() {
            return Err(Error::Parameter(format!("model size {size} is not a power of two")));
        }
        out.push(size.trailing_zeros() as u8);
        out.extend_from_slice(&hash.to_le_bytes());
    }
    out.extend_from_slice(&u32_len(s.octree.len(), "octree")?.to_le_bytes());
    out.extend_from_slice(&s.octree);
    for fields in [&s.flags, &s.modes] {
        out.extend_from_slice(&u32_len(2 * fields.len(), "side information")?.to_le_bytes());
        out.extend_from_slice(&pack2(fields));
    }
    out.extend_from_slice(&u32_len(s.payloads.len(), "payload list")?.to_le_bytes());
    for p in &s.payloads {
        let mut n = p.len() as u64;
        loop {
            let byte = (n & 0x7f) as u8;
            n >>= 7;
            if n == 0 {
                out.push(byte);
                break;
            }
            out.push(byte | 0x80);
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::corrupt(format!("stream truncated in {what}")))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn leb128(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8("payload length")?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::corrupt("payload length prefix too long"))
    }

    fn fields2(&mut self, what: &str) -> Result<Vec<u8>> {
        let bits = self.u32(what)? as usize;
        if !bits.is_multiple_of(2) {
            return Err(Error::corrupt(format!("{what} has an odd bit length")));
        }
        let bytes = self.take(bits.div_ceil(8), what)?;
        Ok(unpack2(bytes, bits / 2))
    }
}

/// Parses a serialized stream.
pub fn parse(bytes: &[u8]) -> Result<CodedBitstream> {
    let mut r = Reader { data: bytes, pos: 0 };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    r.take(4, "magic")?;
    let version = u16::from_le_bytes(r.take(2, "header")?.try_into().unwrap());
    if version > VERSION || version == 0 {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let depth = r.u8("header")?;
    let max_lv = r.u8("header")?;
    let flags = r.u8("header")?;
    if flags & !(FLAG_EXTENSION | FLAG_SINGLE_MODEL) != 0 {
        return Err(Error::corrupt(format!("unknown header flags {flags:#04x}")));
    }
    let options = CodecOptions {
        max_lv,
        extension: flags & FLAG_EXTENSION != 0,
        single_model: flags & FLAG_SINGLE_MODEL != 0,
    };
    if options.validate().is_err() || max_lv > MAX_LEVEL {
        return Err(Error::corrupt("invalid coding options in header"));
    }
    let count = r.u8("model list")?;
    let mut models = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let log2 = r.u8("model list")?;
        if !(3..=7).contains(&log2) {
            return Err(Error::corrupt(format!("model size 2^{log2} out of range")));
        }
        let hash = u64::from_le_bytes(r.take(8, "model list")?.try_into().unwrap());
        models.push((1usize << log2, hash));
    }
    let octree_len = r.u32("octree")? as usize;
    let octree = r.take(octree_len, "octree")?.to_vec();
    let flags = r.fields2("flag segment")?;
    let modes = r.fields2("mode segment")?;
    if flags.contains(&3) {
        return Err(Error::corrupt("invalid partition flag 3"));
    }
    let n = r.u32("payload list")? as usize;
    let mut payloads = Vec::with_capacity(n.min(bytes.len()));
    for _ in 0..n {
        let len = r.leb128()?;
        let len = usize::try_from(len).map_err(|_| Error::corrupt("payload too long"))?;
        payloads.push(r.take(len, "payload")?.to_vec());
    }
    if r.pos != bytes.len() {
        return Err(Error::corrupt("trailing bytes after payloads"));
    }
    Ok(CodedBitstream {
        header: Header {
            depth,
            options,
            models,
        },
        octree,
        flags,
        modes,
        payloads,
    })
}

/// Rate summary of a coded cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BpovReport {
    pub total_bits: u64,
    pub occupied: usize,
    /// Bits per occupied voxel.
    pub bpov: f64,
    /// Percentage of bits that are not arithmetic-coded payload.
    pub side_info_percent: f64,
    pub accounting: Accounting,
}

/// Rate of `stream` for a cloud of `occupied` voxels.
pub fn bpov_report(stream: &[u8], occupied: usize) -> Result<BpovReport> {
    if occupied == 0 {
        return Err(Error::UndefinedDensity);
    }
    let acc = parse(stream)?.accounting();
    let total = 8 * stream.len() as u64;
    debug_assert_eq!(acc.total(), total);
    Ok(BpovReport {
        total_bits: total,
        occupied,
        bpov: total as f64 / occupied as f64,
        side_info_percent: 100.0 * acc.side_info_bits() as f64 / total as f64,
        accounting: acc,
    })
}
