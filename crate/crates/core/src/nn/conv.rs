use rand::Rng;

use super::mask::MaskSpec;
use super::tensor::{Region, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Causally masked 3D convolution, stride 1, zero "same" padding.
///
/// Weights are held in canonical `[cout][cin][k][k][k]` order (masked taps are
/// stored as zeros) and repacked into `[cin][active tap][cout]` doubles for
/// the inner loop. Each output is accumulated in `f64` over input channels,
/// then active taps in kernel raster order, plus bias, and rounded to `f32`
/// once. Zero inputs are skipped; that never changes the sum.
#[derive(Clone, Debug)]
pub struct MaskedConv3d {
    cin: usize,
    cout: usize,
    mask: MaskSpec,
    weight: Vec<f32>,
    bias: Vec<f32>,
    taps: Vec<([i64; 3], usize)>,
    packed: Vec<f64>,
}

/// Gradients of one convolution, weights in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl MaskedConv3d {
    pub fn zeros(cin: usize, cout: usize, mask: MaskSpec) -> Self {
        let k3 = mask.kernel.pow(3);
        let mut c = MaskedConv3d {
            cin,
            cout,
            mask,
            weight: vec![0.0; cout * cin * k3],
            bias: vec![0.0; cout],
            taps: mask.taps(),
            packed: Vec::new(),
        };
        c.repack();
        c
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, fans counted over
    /// unmasked taps only. Bias starts at zero.
    pub fn init(cin: usize, cout: usize, mask: MaskSpec, rng: &mut impl Rng) -> Self {
        let mut c = Self::zeros(cin, cout, mask);
        let active = c.taps.len().max(1);
        let bound = (6.0 / ((cin + cout) * active) as f64).sqrt() as f32;
        let k3 = mask.kernel.pow(3);
        let on = mask.values();
        for co in 0..cout {
            for ci in 0..cin {
                for t in 0..k3 {
                    if on[t] {
                        c.weight[(co * cin + ci) * k3 + t] = rng.random_range(-bound..=bound);
                    }
                }
            }
        }
        c.repack();
        c
    }

    pub fn from_parts(
        cin: usize,
        cout: usize,
        mask: MaskSpec,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let k3 = mask.kernel.pow(3);
        if weight.len() != cout * cin * k3 || bias.len() != cout {
            return Err(Error::Shape(format!(
                "conv {cin}->{cout} k{} expects {} weights and {cout} biases, got {} and {}",
                mask.kernel,
                cout * cin * k3,
                weight.len(),
                bias.len()
            )));
        }
        let mut c = Self::zeros(cin, cout, mask);
        c.weight = weight;
        c.bias = bias;
        c.apply_mask();
        c.repack();
        Ok(c)
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn mask(&self) -> MaskSpec {
        self.mask
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Mutable access to weights and bias; call [`MaskedConv3d::repack`] after
    /// editing.
    pub fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.weight, &mut self.bias)
    }

    /// Re-zeroes masked taps and rebuilds the packed inner-loop weights.
    pub fn repack(&mut self) {
        self.apply_mask();
        let k3 = self.mask.kernel.pow(3);
        let nt = self.taps.len();
        let mut packed = vec![0.0f64; self.cin * nt * self.cout];
        for ci in 0..self.cin {
            for (t, &(_, ki)) in self.taps.iter().enumerate() {
                for co in 0..self.cout {
                    packed[(ci * nt + t) * self.cout + co] =
                        self.weight[(co * self.cin + ci) * k3 + ki] as f64;
                }
            }
        }
        self.packed = packed;
    }

    fn apply_mask(&mut self) {
        let on = self.mask.values();
        let k3 = on.len();
        for (i, w) in self.weight.iter_mut().enumerate() {
            if !on[i % k3] {
                *w = 0.0;
            }
        }
    }

    /// Input region needed to evaluate outputs on `out`, clipped to `volume`.
    ///
    /// Active taps never look forward along x, so x only grows downwards.
    pub fn input_region(&self, out: Region, volume: &Region) -> Region {
        let r = self.mask.radius();
        Region::new(
            [out.lo[0] - r, out.lo[1] - r, out.lo[2] - r],
            [out.hi[0], out.hi[1] + r, out.hi[2] + r],
        )
        .intersect(volume)
    }

    /// Evaluates one output position into `out` (length `cout`).
    ///
    /// `scratch` is reused across calls to avoid allocation.
    pub fn forward_at(
        &self,
        input: &Tensor,
        volume: &Region,
        p: [i64; 3],
        out: &mut [f32],
        scratch: &mut ConvScratch,
    ) {
        let cout = self.cout;
        let nt = self.taps.len();
        scratch.valid.clear();
        for (t, (off, _)) in self.taps.iter().enumerate() {
            let q = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
            if volume.contains(q) {
                scratch.valid.push((t, input.region.offset(q) * self.cin));
            }
        }
        let acc = &mut scratch.acc;
        acc.clear();
        acc.resize(cout, 0.0);
        for ci in 0..self.cin {
            for &(t, base) in &scratch.valid {
                let x = input.data[base + ci];
                if x == 0.0 {
                    continue;
                }
                let x = x as f64;
                let w = &self.packed[(ci * nt + t) * cout..][..cout];
                for (a, &wv) in acc.iter_mut().zip(w) {
                    *a += wv * x;
                }
            }
        }
        for ((o, a), &b) in out.iter_mut().zip(acc.iter()).zip(&self.bias) {
            *o = (*a + b as f64) as f32;
        }
    }

    /// Evaluates the convolution on every position of `out`.
    ///
    /// `input` must cover [`MaskedConv3d::input_region`] of `out`.
    pub fn forward(&self, input: &Tensor, volume: &Region, out: Region) -> Result<Tensor> {
        if input.channels != self.cin {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.cin, input.channels
            )));
        }
        if !input.region.contains_region(&self.input_region(out, volume)) {
            return Err(Error::Shape(format!(
                "input region {:?} does not cover the receptive field of {out:?}",
                input.region
            )));
        }
        let mut result = Tensor::zeros(self.cout, out);
        let d = out.dims();
        let slab = d[1] * d[2];
        if slab == 0 {
            return Ok(result);
        }
        par::for_each_chunk_mut(&mut result.data, slab * self.cout, |xi, chunk| {
            let mut scratch = ConvScratch::default();
            for j in 0..slab {
                let p = out.point(xi * slab + j);
                self.forward_at(
                    input,
                    volume,
                    p,
                    &mut chunk[j * self.cout..(j + 1) * self.cout],
                    &mut scratch,
                );
            }
        });
        Ok(result)
    }

    /// Gradients for a full-volume evaluation (input, output and `volume`
    /// share one region).
    pub fn backward(&self, cached_input: Option<&Tensor>, grad_out: &Tensor) -> Result<ConvGrads> {
        let input = cached_input.ok_or(Error::State("backward called without a forward cache"))?;
        let volume = input.region;
        if grad_out.region != volume || grad_out.channels != self.cout || input.channels != self.cin {
            return Err(Error::Shape("backward expects full-volume tensors".into()));
        }
        let (cin, cout) = (self.cin, self.cout);
        let nt = self.taps.len();
        let n = volume.volume();
        let d = volume.dims();
        let slab = d[1] * d[2];

        // dL/dx[q][ci] = sum_t sum_co w[co][ci][t] * g[q - off_t][co]
        let mut grad_in = Tensor::zeros(cin, volume);
        if slab > 0 {
            par::for_each_chunk_mut(&mut grad_in.data, slab * cin, |xi, chunk| {
                let mut acc = vec![0.0f64; cin];
                for j in 0..slab {
                    let q = volume.point(xi * slab + j);
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for (t, (off, _)) in self.taps.iter().enumerate() {
                        let p = [q[0] - off[0], q[1] - off[1], q[2] - off[2]];
                        if !volume.contains(p) {
                            continue;
                        }
                        let g = grad_out.at(p);
                        for (ci, a) in acc.iter_mut().enumerate() {
                            let w = &self.packed[(ci * nt + t) * cout..][..cout];
                            let mut s = 0.0f64;
                            for (&wv, &gv) in w.iter().zip(g) {
                                s += wv * gv as f64;
                            }
                            *a += s;
                        }
                    }
                    for (o, a) in chunk[j * cin..(j + 1) * cin].iter_mut().zip(&acc) {
                        *o = *a as f32;
                    }
                }
            });
        }

        // dL/dw[co][ci][t] = sum_p g[p][co] * x[p + off_t][ci], one task per tap.
        let per_tap: Vec<Vec<f64>> = par::map_indexed(nt, |t| {
            let off = self.taps[t].0;
            let mut acc = vec![0.0f64; cin * cout];
            for i in 0..n {
                let p = volume.point(i);
                let q = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
                if !volume.contains(q) {
                    continue;
                }
                let x = input.at(q);
                let g = grad_out.at(p);
                for (ci, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let xv = xv as f64;
                    for (a, &gv) in acc[ci * cout..(ci + 1) * cout].iter_mut().zip(g) {
                        *a += gv as f64 * xv;
                    }
                }
            }
            acc
        });
        let k3 = self.mask.kernel.pow(3);
        let mut grad_w = vec![0.0f32; self.weight.len()];
        for (t, acc) in per_tap.iter().enumerate() {
            let ki = self.taps[t].1;
            for ci in 0..cin {
                for co in 0..cout {
                    grad_w[(co * cin + ci) * k3 + ki] = acc[ci * cout + co] as f32;
                }
            }
        }
        let mut grad_b = vec![0.0f64; cout];
        for i in 0..n {
            for (a, &g) in grad_b.iter_mut().zip(grad_out.at(volume.point(i))) {
                *a += g as f64;
            }
        }
        Ok(ConvGrads {
            input: grad_in,
            weight: grad_w,
            bias: grad_b.into_iter().map(|v| v as f32).collect(),
        })
    }
}

/// Reusable buffers for [`MaskedConv3d::forward_at`].
#[derive(Default, Debug)]
pub struct ConvScratch {
    valid: Vec<(usize, usize)>,
    acc: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MaskKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, side: usize, rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(c, Region::cube(side));
        for v in &mut t.data {
            *v = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) };
        }
        t
    }

    /// Direct loop over canonical weights, same accumulation order.
    fn reference(conv: &MaskedConv3d, input: &Tensor, side: usize) -> Tensor {
        let k = conv.mask().kernel as i64;
        let r = k / 2;
        let on = conv.mask().values();
        let (cin, cout) = (conv.in_channels(), conv.out_channels());
        let vol = Region::cube(side);
        let mut out = Tensor::zeros(cout, vol);
        for co in 0..cout {
            for x in 0..side as i64 {
                for y in 0..side as i64 {
                    for z in 0..side as i64 {
                        let mut acc = 0.0f64;
                        for ci in 0..cin {
                            for kx in 0..k {
                                for ky in 0..k {
                                    for kz in 0..k {
                                        let ki = ((kx * k + ky) * k + kz) as usize;
                                        if !on[ki] {
                                            continue;
                                        }
                                        let q = [x + kx - r, y + ky - r, z + kz - r];
                                        if !vol.contains(q) {
                                            continue;
                                        }
                                        let w = conv.weight()[(co * cin + ci) * on.len() + ki];
                                        acc += w as f64 * input.at(q)[ci] as f64;
                                    }
                                }
                            }
                        }
                        out.at_mut([x, y, z])[co] = (acc + conv.bias()[co] as f64) as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut conv = MaskedConv3d::zeros(2, 3, MaskSpec::new(MaskKind::B, 3));
        conv.params_mut().1.copy_from_slice(&[0.5, -1.0, 2.0]);
        conv.repack();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = random_tensor(2, 5, &mut rng);
        let out = conv.forward(&input, &Region::cube(5), Region::cube(5)).unwrap();
        for p in out.data.chunks(3) {
            assert_eq!(p, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn type_a_single_voxel_causality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = MaskedConv3d::init(1, 4, MaskSpec::new(MaskKind::A, 3), &mut rng);
        let vol = Region::cube(6);
        let zero = conv.forward(&Tensor::zeros(1, vol), &vol, vol).unwrap();
        let i = vol.offset([3, 2, 4]);
        let mut input = Tensor::zeros(1, vol);
        input.data[i] = 1.0;
        let out = conv.forward(&input, &vol, vol).unwrap();
        for j in 0..=i {
            assert_eq!(out.at(vol.point(j)), zero.at(vol.point(j)), "position {j}");
        }
    }

    #[test]
    fn matches_reference_loop_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (kind, k, cin, cout) in [(MaskKind::A, 3, 1, 4), (MaskKind::B, 5, 3, 2), (MaskKind::B, 1, 4, 4)] {
            let conv = MaskedConv3d::init(cin, cout, MaskSpec::new(kind, k), &mut rng);
            let input = random_tensor(cin, 8, &mut rng);
            let vol = Region::cube(8);
            let fast = conv.forward(&input, &vol, vol).unwrap();
            let slow = reference(&conv, &input, 8);
            let a: Vec<u32> = fast.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = slow.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sub_region_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = MaskedConv3d::init(2, 3, MaskSpec::new(MaskKind::B, 3), &mut rng);
        let vol = Region::cube(8);
        let input = random_tensor(2, 8, &mut rng);
        let full = conv.forward(&input, &vol, vol).unwrap();
        let out = Region::new([4, 1, 5], [8, 4, 8]);
        let need = conv.input_region(out, &vol);
        let part = conv.forward(&input.crop(need), &vol, out).unwrap();
        assert_eq!(part, full.crop(out));
    }

    #[test]
    fn uncovered_input_is_shape_error() {
        let conv = MaskedConv3d::zeros(1, 1, MaskSpec::new(MaskKind::B, 3));
        let vol = Region::cube(4);
        let small = Tensor::zeros(1, Region::new([2, 2, 2], [4, 4, 4]));
        assert!(matches!(conv.forward(&small, &vol, vol), Err(Error::Shape(_))));
        let wrong = Tensor::zeros(2, vol);
        assert!(matches!(conv.forward(&wrong, &vol, vol), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_without_cache_is_state_error() {
        let conv = MaskedConv3d::zeros(1, 1, MaskSpec::new(MaskKind::B, 3));
        let g = Tensor::zeros(1, Region::cube(2));
        assert!(matches!(conv.backward(None, &g), Err(Error::State(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = MaskedConv3d::init(2, 3, MaskSpec::new(MaskKind::A, 3), &mut rng);
        let input = random_tensor(2, 4, &mut rng);
        let g = conv.backward(Some(&input), &Tensor::zeros(3, Region::cube(4))).unwrap();
        assert!(g.input.data.iter().all(|&v| v == 0.0));
        assert!(g.weight.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_weight_grads_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = MaskSpec::new(MaskKind::A, 3);
        let conv = MaskedConv3d::init(2, 2, mask, &mut rng);
        let input = random_tensor(2, 5, &mut rng);
        let g_out = random_tensor(2, 5, &mut rng);
        let g = conv.backward(Some(&input), &g_out).unwrap();
        let on = mask.values();
        for (i, &v) in g.weight.iter().enumerate() {
            if !on[i % 27] {
                assert_eq!(v, 0.0);
            }
        }
        assert!(g.weight.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn from_parts_zeroes_masked_taps() {
        let mask = MaskSpec::new(MaskKind::A, 3);
        let c = MaskedConv3d::from_parts(1, 1, mask, vec![1.0; 27], vec![0.0]).unwrap();
        assert_eq!(c.weight().iter().filter(|&&w| w != 0.0).count(), 13);
        assert!(MaskedConv3d::from_parts(1, 1, mask, vec![1.0; 26], vec![0.0]).is_err());
    }
}
