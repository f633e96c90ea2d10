//! Region-restricted evaluation.
//!
//! Only the outputs on a target box are needed when coding a sub-block, so
//! each layer is evaluated on the target grown by the receptive field of the
//! layers after it. Every value is produced by the same per-position kernel
//! as a full-volume pass, so results are bit-identical to it.

use super::VoxelDnn;
use crate::error::{Error, Result};
use crate::nn::{add_residual, relu, softmax2, softmax2_pair, Region, Tensor};
use crate::nn::conv::ConvScratch;

/// Regions each stage must be evaluated on to produce outputs on `target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    volume: Region,
    target: Region,
    input: Region,
    first: Region,
    /// Per residual block: (inner activation region, block output region).
    blocks: Vec<(Region, Region)>,
}

impl Plan {
    /// `volume` is the model's input cube (zero padded outside); `target` the
    /// box whose probabilities are wanted.
    pub fn new(net: &VoxelDnn, volume: Region, target: Region) -> Plan {
        let target = target.intersect(&volume);
        let mut need = target;
        let mut blocks = Vec::with_capacity(net.res.len());
        for rb in net.res.iter().rev() {
            let inner = rb.conv1.input_region(need, &volume);
            blocks.push((inner, need));
            need = rb.conv0.input_region(inner, &volume);
        }
        blocks.reverse();
        let input = net.input.input_region(need, &volume);
        Plan {
            volume,
            target,
            input,
            first: need,
            blocks,
        }
    }

    /// Region the occupancy input must cover.
    pub fn input_region(&self) -> Region {
        self.input
    }

    pub fn target(&self) -> Region {
        self.target
    }

    pub fn volume(&self) -> Region {
        self.volume
    }
}

impl VoxelDnn {
    /// Batch evaluation of `plan.target()`; returns `P(1)` in target raster
    /// order. `x` is single-channel occupancy covering `plan.input_region()`.
    pub fn predict_region(&self, x: &Tensor, plan: &Plan) -> Result<Vec<f64>> {
        if x.channels != 1 || !x.region.contains_region(&plan.input) {
            return Err(Error::Shape(format!(
                "input {:?} does not cover {:?}",
                x.region, plan.input
            )));
        }
        let vol = &plan.volume;
        let mut h = self.input.forward(x, vol, plan.first)?;
        relu(&mut h);
        for (rb, &(inner, out)) in self.res.iter().zip(&plan.blocks) {
            let mut t = rb.conv0.forward(&h, vol, inner)?;
            relu(&mut t);
            let mut u = rb.conv1.forward(&t, vol, out)?;
            relu(&mut u);
            let mut next = h.crop(out);
            add_residual(&mut next, &u);
            h = next;
        }
        let mut g = self.head0.forward(&h, vol, plan.target)?;
        relu(&mut g);
        let logits = self.head1.forward(&g, vol, plan.target)?;
        Ok(softmax2(&logits))
    }
}

/// Voxel-by-voxel evaluation for decoding: target voxels are unknown until
/// their probability has been produced and the caller has decided them.
pub struct IncrementalEval<'a> {
    net: &'a VoxelDnn,
    plan: Plan,
    x: Tensor,
    first: Tensor,
    inner: Vec<Tensor>,
    outs: Vec<Tensor>,
}

impl<'a> IncrementalEval<'a> {
    /// `context` covers `plan.input_region()` and holds known occupancy
    /// outside the target; its values inside the target are ignored.
    pub fn new(net: &'a VoxelDnn, plan: Plan, mut context: Tensor) -> Result<Self> {
        if context.channels != 1 || context.region != plan.input {
            return Err(Error::Shape("context must cover exactly the plan input region".into()));
        }
        for i in 0..plan.target.volume() {
            context.at_mut(plan.target.point(i))[0] = 0.0;
        }
        let f = net.config.filters;
        let first = Tensor::zeros(f, plan.first);
        let inner = plan.blocks.iter().map(|b| Tensor::zeros(f, b.0)).collect();
        let outs = plan.blocks.iter().map(|b| Tensor::zeros(f, b.1)).collect();
        Ok(IncrementalEval {
            net,
            plan,
            x: context,
            first,
            inner,
            outs,
        })
    }

    /// Walks the target in raster order. For each voxel, `decide(index, p1)`
    /// returns its occupancy, which is fed back before the next voxel.
    pub fn run(mut self, mut decide: impl FnMut(usize, f64) -> Result<bool>) -> Result<()> {
        let net = self.net;
        let vol = self.plan.volume;
        let f = net.config.filters;
        let hw = net.config.head_width;
        let mut scratch = ConvScratch::default();
        let mut buf = vec![0.0f32; f];
        let mut g = Tensor::zeros(hw, Region::new([0; 3], [1; 3]));
        let mut logits = [0.0f32; 2];
        let mut next_target = 0usize;

        for i in 0..self.plan.first.volume() {
            let p = self.plan.first.point(i);
            net.input
                .forward_at(&self.x, &vol, p, self.first.at_mut(p), &mut scratch);
            relu_slice(self.first.at_mut(p));

            for (b, rb) in net.res.iter().enumerate() {
                let (inner_r, out_r) = self.plan.blocks[b];
                let prev = if b == 0 { &self.first } else { &self.outs[b - 1] };
                if inner_r.contains(p) {
                    let t = &mut self.inner[b];
                    rb.conv0.forward_at(prev, &vol, p, t.at_mut(p), &mut scratch);
                    relu_slice(t.at_mut(p));
                }
                if out_r.contains(p) {
                    rb.conv1
                        .forward_at(&self.inner[b], &vol, p, &mut buf, &mut scratch);
                    relu_slice(&mut buf);
                    let prev_v = if b == 0 { self.first.at(p) } else { self.outs[b - 1].at(p) };
                    let mut sum = prev_v.to_vec();
                    for (s, &u) in sum.iter_mut().zip(&buf) {
                        *s += u;
                    }
                    self.outs[b].at_mut(p).copy_from_slice(&sum);
                }
            }

            if self.plan.target.contains(p) {
                let h = self.outs.last().unwrap_or(&self.first);
                g.region = Region::new(p, [p[0] + 1, p[1] + 1, p[2] + 1]);
                net.head0.forward_at(h, &vol, p, &mut g.data, &mut scratch);
                relu_slice(&mut g.data);
                net.head1.forward_at(&g, &vol, p, &mut logits, &mut scratch);
                let p1 = softmax2_pair(logits[0], logits[1]).1;
                let bit = decide(next_target, p1)?;
                self.x.at_mut(p)[0] = bit as u8 as f32;
                next_target += 1;
            }
        }
        debug_assert_eq!(next_target, self.plan.target.volume());
        Ok(())
    }
}

#[inline]
fn relu_slice(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelBlock;
    use crate::model::VoxelDnnConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_context(region: Region, density: f64, rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(1, region);
        for v in &mut t.data {
            *v = rng.random_bool(density) as u8 as f32;
        }
        t
    }

    #[test]
    fn region_matches_full_volume() {
        let net = VoxelDnn::new(VoxelDnnConfig::desk(16), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vol = Region::cube(16);
        let full_x = random_context(vol, 0.2, &mut rng);
        let full = net.predict_region(&full_x, &Plan::new(&net, vol, vol)).unwrap();
        for target in [
            Region::new([8, 8, 8], [16, 16, 16]),
            Region::new([0, 0, 0], [4, 4, 4]),
            Region::new([12, 0, 4], [16, 8, 8]),
        ] {
            let plan = Plan::new(&net, vol, target);
            let part = net.predict_region(&full_x.crop(plan.input_region()), &plan).unwrap();
            for i in 0..target.volume() {
                assert_eq!(part[i], full[vol.offset(target.point(i))]);
            }
        }
    }

    #[test]
    fn incremental_matches_batch() {
        let net = VoxelDnn::new(VoxelDnnConfig::desk(16), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vol = Region::cube(16);
        let target = Region::new([8, 8, 8], [16, 16, 16]);
        let plan = Plan::new(&net, vol, target);
        let x = random_context(plan.input_region(), 0.25, &mut rng);
        let batch = net.predict_region(&x, &plan).unwrap();
        let truth: Vec<bool> = (0..target.volume())
            .map(|i| x.at(target.point(i))[0] != 0.0)
            .collect();
        let mut seen = Vec::new();
        IncrementalEval::new(&net, plan, x.clone())
            .unwrap()
            .run(|i, p| {
                seen.push(p);
                Ok(truth[i])
            })
            .unwrap();
        assert_eq!(seen, batch);
    }

    #[test]
    fn plan_is_nested() {
        let net = VoxelDnn::new(VoxelDnnConfig::desk(64), 0).unwrap();
        let plan = Plan::new(&net, Region::cube(64), Region::new([56; 3], [64; 3]));
        let r = net.config().receptive_radius() as i64;
        assert_eq!(plan.input_region().lo, [56 - r, 56 - r, 56 - r]);
        assert!(plan.input_region().contains_region(&plan.first));
        for (inner, out) in &plan.blocks {
            assert!(plan.first.contains_region(inner));
            assert!(inner.contains_region(out));
        }
        let _ = VoxelBlock::new(1);
    }
}
