/// Causal kernel mask kind.
///
/// Type A excludes the centre tap (first layer), type B includes it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Odd kernel side `k`; the kernel is `k×k×k`.
    pub kernel: usize,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel side must be odd");
        MaskSpec { kind, kernel }
    }

    /// Mask values in kernel raster order (x slowest, z fastest).
    pub fn values(&self) -> Vec<bool> {
        let n = self.kernel.pow(3);
        let centre = n / 2;
        (0..n)
            .map(|i| match self.kind {
                MaskKind::A => i < centre,
                MaskKind::B => i <= centre,
            })
            .collect()
    }

    /// Offsets `(dx, dy, dz)` of the unmasked taps with their kernel raster
    /// index, in kernel raster order.
    pub fn taps(&self) -> Vec<([i64; 3], usize)> {
        let k = self.kernel as i64;
        let r = k / 2;
        self.values()
            .into_iter()
            .enumerate()
            .filter(|(_, on)| *on)
            .map(|(i, _)| {
                let i = i as i64;
                ([i / (k * k) - r, (i / k) % k - r, i % k - r], i as usize)
            })
            .collect()
    }

    pub fn radius(&self) -> i64 {
        (self.kernel / 2) as i64
    }

    pub fn active_count(&self) -> usize {
        self.values().iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k3_counts() {
        assert_eq!(MaskSpec::new(MaskKind::A, 3).active_count(), 13);
        assert_eq!(MaskSpec::new(MaskKind::B, 3).active_count(), 14);
        assert_eq!(MaskSpec::new(MaskKind::B, 1).active_count(), 1);
        assert_eq!(MaskSpec::new(MaskKind::A, 1).active_count(), 0);
    }

    #[test]
    fn taps_precede_centre() {
        for kind in [MaskKind::A, MaskKind::B] {
            for k in [1, 3, 5, 7] {
                let m = MaskSpec::new(kind, k);
                for (off, _) in m.taps() {
                    let lin = off[0] * 10_000 + off[1] * 100 + off[2];
                    match kind {
                        MaskKind::A => assert!(lin < 0),
                        MaskKind::B => assert!(lin <= 0),
                    }
                    assert!(off[0] <= 0);
                }
            }
        }
    }
}
