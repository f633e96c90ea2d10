/// Half-open axis-aligned box `[lo, hi)` in volume coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl Region {
    pub fn cube(side: usize) -> Self {
        Region {
            lo: [0; 3],
            hi: [side as i64; 3],
        }
    }

    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Self {
        Region { lo, hi }
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| (self.hi[a] - self.lo[a]).max(0) as usize)
    }

    pub fn volume(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.volume() == 0
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        other.is_empty() || (0..3).all(|a| other.lo[a] >= self.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn intersect(&self, other: &Region) -> Region {
        Region {
            lo: [0, 1, 2].map(|a| self.lo[a].max(other.lo[a])),
            hi: [0, 1, 2].map(|a| self.hi[a].min(other.hi[a])),
        }
    }

    /// Row-major offset of `p` inside the region.
    #[inline]
    pub fn offset(&self, p: [i64; 3]) -> usize {
        let d = self.dims();
        (((p[0] - self.lo[0]) as usize * d[1] + (p[1] - self.lo[1]) as usize) * d[2])
            + (p[2] - self.lo[2]) as usize
    }

    /// Position of the `i`-th point in raster order.
    #[inline]
    pub fn point(&self, i: usize) -> [i64; 3] {
        let d = self.dims();
        [
            self.lo[0] + (i / (d[1] * d[2])) as i64,
            self.lo[1] + ((i / d[2]) % d[1]) as i64,
            self.lo[2] + (i % d[2]) as i64,
        ]
    }
}

/// Feature map over a [`Region`], channels-last: `data[pos * channels + c]`
/// with positions in raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub region: Region,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, region: Region) -> Self {
        Tensor {
            channels,
            region,
            data: vec![0.0; channels * region.volume()],
        }
    }

    /// Single-channel tensor from 0/1 occupancy over a cube.
    pub fn from_occupancy(side: usize, occ: &[u8]) -> Self {
        assert_eq!(occ.len(), side * side * side);
        Tensor {
            channels: 1,
            region: Region::cube(side),
            data: occ.iter().map(|&v| v as f32).collect(),
        }
    }

    #[inline]
    pub fn at(&self, p: [i64; 3]) -> &[f32] {
        let o = self.region.offset(p) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, p: [i64; 3]) -> &mut [f32] {
        let o = self.region.offset(p) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copies the overlap of `self.region` and `region` into a new tensor.
    pub fn crop(&self, region: Region) -> Tensor {
        let mut out = Tensor::zeros(self.channels, region);
        for i in 0..region.volume() {
            let p = region.point(i);
            if self.region.contains(p) {
                out.at_mut(p).copy_from_slice(self.at(p));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_offsets_roundtrip() {
        let r = Region::new([-2, 3, 1], [2, 6, 8]);
        for i in 0..r.volume() {
            assert_eq!(r.offset(r.point(i)), i);
        }
        assert!(r.contains([-2, 3, 1]));
        assert!(!r.contains([2, 3, 1]));
    }
}
