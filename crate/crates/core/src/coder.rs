//! Binary arithmetic coder driven by external probabilities.
//!
//! 32-bit low/high registers with pending-bit (carry-less) renormalisation.
//! Probabilities are quantised to 16 bits before every interval split, on
//! both sides. Output is MSB-first within bytes.

use crate::error::{Error, Result};

const HALF: u32 = 1 << 31;
const QUARTER: u32 = 1 << 30;
const PROB_BITS: u32 = 16;
const PROB_ONE: u32 = 1 << PROB_BITS;

/// Zero bits the decoder may read past the end of a payload before the
/// stream is declared exhausted.
const MAX_OVERREAD_BITS: u64 = 64;

/// Quantises `P(bit = 1)` to `[1, 65535] / 65536`.
#[inline]
pub fn quantize(p1: f64) -> u32 {
    let q = (p1 * PROB_ONE as f64).round();
    if q.is_nan() {
        return PROB_ONE / 2;
    }
    (q as i64).clamp(1, (PROB_ONE - 1) as i64) as u32
}

/// Upper end of the "0" sub-interval.
#[inline]
fn split(low: u32, high: u32, q1: u32) -> u32 {
    let range = (high - low) as u64 + 1;
    let q0 = (PROB_ONE - q1) as u64;
    low + ((range * q0) >> PROB_BITS) as u32 - 1
}

#[derive(Default, Debug)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    n: u8,
}

impl BitWriter {
    #[inline]
    fn put(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | bit as u8;
        self.n += 1;
        if self.n == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.n = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.bytes.push(self.acc << (8 - self.n));
        }
        self.bytes
    }
}

#[derive(Debug)]
pub struct ArithEncoder {
    low: u32,
    high: u32,
    pending: u64,
    out: Option<BitWriter>,
    symbols: u64,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        ArithEncoder {
            low: 0,
            high: u32::MAX,
            pending: 0,
            out: Some(BitWriter::default()),
            symbols: 0,
        }
    }

    #[inline]
    fn emit(out: &mut BitWriter, bit: bool, pending: &mut u64) {
        out.put(bit);
        for _ in 0..*pending {
            out.put(!bit);
        }
        *pending = 0;
    }

    /// Codes `bit` with `P(bit = 1) = p1`.
    pub fn encode(&mut self, bit: bool, p1: f64) -> Result<()> {
        self.encode_quantized(bit, quantize(p1))
    }

    pub fn encode_quantized(&mut self, bit: bool, q1: u32) -> Result<()> {
        let out = self
            .out
            .as_mut()
            .ok_or(Error::State("encoder already flushed"))?;
        let mid = split(self.low, self.high, q1);
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
                Self::emit(out, false, &mut self.pending);
            } else if self.low >= HALF {
                Self::emit(out, true, &mut self.pending);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
        self.symbols += 1;
        Ok(())
    }

    pub fn symbols(&self) -> u64 {
        self.symbols
    }

    /// Terminates the interval and returns the payload with its size in
    /// bits (always `8 * payload.len()`).
    pub fn finish(&mut self) -> Result<(Vec<u8>, u64)> {
        let mut out = self
            .out
            .take()
            .ok_or(Error::State("encoder already flushed"))?;
        self.pending += 1;
        let bit = self.low >= QUARTER;
        Self::emit(&mut out, bit, &mut self.pending);
        let bytes = out.finish();
        let bits = 8 * bytes.len() as u64;
        Ok((bytes, bits))
    }
}

#[derive(Debug)]
pub struct ArithDecoder<'a> {
    data: &'a [u8],
    bit_pos: u64,
    low: u32,
    high: u32,
    value: u32,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = ArithDecoder {
            data,
            bit_pos: 0,
            low: 0,
            high: u32::MAX,
            value: 0,
        };
        for _ in 0..32 {
            d.value = (d.value << 1) | d.next_bit()? as u32;
        }
        Ok(d)
    }

    #[inline]
    fn next_bit(&mut self) -> Result<bool> {
        let total = 8 * self.data.len() as u64;
        let pos = self.bit_pos;
        self.bit_pos += 1;
        if pos < total {
            let byte = self.data[(pos / 8) as usize];
            Ok((byte >> (7 - pos % 8)) & 1 == 1)
        } else if pos < total + MAX_OVERREAD_BITS {
            Ok(false)
        } else {
            Err(Error::corrupt("arithmetic-coded payload exhausted"))
        }
    }

    pub fn decode(&mut self, p1: f64) -> Result<bool> {
        self.decode_quantized(quantize(p1))
    }

    pub fn decode_quantized(&mut self, q1: u32) -> Result<bool> {
        let mid = split(self.low, self.high, q1);
        let bit = self.value > mid;
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit()? as u32;
        }
        Ok(bit)
    }
}

/// Ideal code length in bits of `bits` under the quantised probabilities.
pub fn ideal_bits(bits: &[bool], p1: &[f64]) -> f64 {
    bits.iter()
        .zip(p1)
        .map(|(&b, &p)| {
            let q = quantize(p) as f64 / PROB_ONE as f64;
            -(if b { q } else { 1.0 - q }).log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encode_all(bits: &[bool], p: &[f64]) -> (Vec<u8>, u64) {
        let mut enc = ArithEncoder::new();
        for (&b, &q) in bits.iter().zip(p) {
            enc.encode(b, q).unwrap();
        }
        enc.finish().unwrap()
    }

    fn decode_all(data: &[u8], p: &[f64]) -> Result<Vec<bool>> {
        let mut dec = ArithDecoder::new(data)?;
        p.iter().map(|&q| dec.decode(q)).collect()
    }

    #[test]
    fn single_symbol() {
        let (bytes, bits) = encode_all(&[true], &[0.5]);
        assert_eq!(bits, 8 * bytes.len() as u64);
        // one coded bit plus a two-bit flush, padded to a byte
        assert_eq!(bytes.len(), 1);
        assert_eq!(decode_all(&bytes, &[0.5]).unwrap(), vec![true]);
    }

    #[test]
    fn empty_message_is_small() {
        let (bytes, _) = ArithEncoder::new().finish().unwrap();
        assert!(bytes.len() <= 4);
    }

    #[test]
    fn reflush_is_state_error() {
        let mut enc = ArithEncoder::new();
        enc.finish().unwrap();
        assert!(matches!(enc.finish(), Err(Error::State(_))));
        assert!(matches!(enc.encode(true, 0.5), Err(Error::State(_))));
    }

    #[test]
    fn quantize_limits() {
        assert_eq!(quantize(0.0), 1);
        assert_eq!(quantize(1.0), 65535);
        assert_eq!(quantize(0.5), 32768);
        assert_eq!(quantize(f64::NAN), 32768);
    }

    #[test]
    fn bernoulli_near_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let p = vec![0.1; n];
        let (bytes, total) = encode_all(&bits, &p);
        let h = -(0.1f64 * 0.1f64.log2() + 0.9 * 0.9f64.log2());
        assert!((total as f64) <= 1.01 * n as f64 * h + 64.0, "{total}");
        assert_eq!(decode_all(&bytes, &p).unwrap(), bits);
    }

    #[test]
    fn rate_tracks_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 50_000;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let bits: Vec<bool> = p.iter().map(|&q| rng.random_bool(q)).collect();
        let (bytes, total) = encode_all(&bits, &p);
        let ideal = ideal_bits(&bits, &p);
        assert!((total as f64) <= ideal * 1.001 + 64.0, "{total} vs {ideal}");
        assert_eq!(decode_all(&bytes, &p).unwrap(), bits);
    }

    #[test]
    fn exhausted_stream_errors() {
        // Decoding far more symbols than were coded eventually runs out.
        let (bytes, _) = encode_all(&[true; 4], &[0.5; 4]);
        let mut dec = ArithDecoder::new(&bytes).unwrap();
        let mut err = None;
        for _ in 0..1000 {
            if let Err(e) = dec.decode(0.5) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::CorruptStream(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(seq in proptest::collection::vec((any::<bool>(), 0.0f64..=1.0), 0..2000)) {
            let bits: Vec<bool> = seq.iter().map(|s| s.0).collect();
            let p: Vec<f64> = seq.iter().map(|s| s.1).collect();
            let (bytes, total) = encode_all(&bits, &p);
            prop_assert_eq!(total, 8 * bytes.len() as u64);
            prop_assert_eq!(decode_all(&bytes, &p).unwrap(), bits);
        }

        #[test]
        fn skewed_roundtrip(seq in proptest::collection::vec(any::<bool>(), 0..3000), p in 0.0f64..0.001) {
            let probs = vec![p; seq.len()];
            let (bytes, _) = encode_all(&seq, &probs);
            prop_assert_eq!(decode_all(&bytes, &probs).unwrap(), seq);
        }
    }
}
