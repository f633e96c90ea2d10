//! Cross-entropy training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{VoxelDnn, VoxelDnnConfig};
use crate::error::{Error, Result};
use crate::geometry::VoxelBlock;
use crate::nn::{
    add_residual, fnv1a64, occupancy_loss, relu, relu_backward, Adam, ConvGrads, Region, Tensor,
};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// 80 epochs at learning rate 0.001, batch size by block size
    /// (128: 1, 64: 8, 32: 64, 16 and 8: 128).
    pub fn defaults_for(block_size: usize) -> Self {
        let batch_size = match block_size {
            128 => 1,
            64 => 8,
            32 => 64,
            _ => 128,
        };
        TrainConfig {
            lr: 0.001,
            epochs: 80,
            batch_size,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean loss in bits/voxel over the dataset before the first update.
    pub initial_loss: f64,
    /// Mean training loss in bits/voxel of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Cache {
    x: Tensor,
    first: Tensor,
    /// Per residual block: (input, inner activation, branch output).
    blocks: Vec<(Tensor, Tensor, Tensor)>,
    last: Tensor,
    g: Tensor,
}

impl VoxelDnn {
    fn forward_cached(&self, block: &VoxelBlock) -> Result<(Cache, Tensor)> {
        let d = self.config.block_size;
        let vol = Region::cube(d);
        let x = Tensor::from_occupancy(d, block.bits());
        let mut first = self.input.forward(&x, &vol, vol)?;
        relu(&mut first);
        let mut h = first.clone();
        let mut blocks = Vec::with_capacity(self.res.len());
        for rb in &self.res {
            let mut t = rb.conv0.forward(&h, &vol, vol)?;
            relu(&mut t);
            let mut u = rb.conv1.forward(&t, &vol, vol)?;
            relu(&mut u);
            let mut next = h.clone();
            add_residual(&mut next, &u);
            blocks.push((h, t, u));
            h = next;
        }
        let mut g = self.head0.forward(&h, &vol, vol)?;
        relu(&mut g);
        let logits = self.head1.forward(&g, &vol, vol)?;
        Ok((
            Cache {
                x,
                first,
                blocks,
                last: h,
                g,
            },
            logits,
        ))
    }

    /// Loss (bits/voxel) and parameter gradients for one block, in the order
    /// of [`VoxelDnn::layers`], weight then bias.
    pub fn loss_and_grads(&self, block: &VoxelBlock) -> Result<(f64, Vec<Vec<f32>>)> {
        let (cache, logits) = self.forward_cached(block)?;
        let (loss, dlogits) = occupancy_loss(&logits, block.bits());

        let mut grads_rev: Vec<ConvGrads> = Vec::new();
        let gh1 = self.head1.backward(Some(&cache.g), &dlogits)?;
        let mut dg = gh1.input.clone();
        grads_rev.push(gh1);
        relu_backward(&cache.g, &mut dg);
        let gh0 = self.head0.backward(Some(&cache.last), &dg)?;
        let mut dh = gh0.input.clone();
        grads_rev.push(gh0);

        for (rb, (h_in, t, u)) in self.res.iter().zip(&cache.blocks).rev() {
            let mut du = dh.clone();
            relu_backward(u, &mut du);
            let g1 = rb.conv1.backward(Some(t), &du)?;
            let mut dt = g1.input.clone();
            grads_rev.push(g1);
            relu_backward(t, &mut dt);
            let g0 = rb.conv0.backward(Some(h_in), &dt)?;
            add_residual(&mut dh, &g0.input);
            grads_rev.push(g0);
        }
        let mut dfirst = dh;
        relu_backward(&cache.first, &mut dfirst);
        grads_rev.push(self.input.backward(Some(&cache.x), &dfirst)?);

        let mut out = Vec::with_capacity(2 * grads_rev.len());
        for g in grads_rev.into_iter().rev() {
            out.push(g.weight);
            out.push(g.bias);
        }
        Ok((loss, out))
    }

    /// Mean cross-entropy of one block in bits/voxel.
    pub fn block_loss(&self, block: &VoxelBlock) -> Result<f64> {
        let p = self.predict_block(block)?;
        Ok(crate::nn::cross_entropy_bits(&p, block.bits()))
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.layers()
            .iter()
            .flat_map(|l| [l.weight().len(), l.bias().len()])
            .collect()
    }

    fn apply_adam(&mut self, opt: &mut Adam, grads: &[Vec<f32>]) {
        let mut params: Vec<&mut [f32]> = Vec::new();
        let mut layers = self.layers_mut();
        for l in layers.iter_mut() {
            let (w, b) = l.params_mut();
            params.push(w);
            params.push(b);
        }
        let g: Vec<&[f32]> = grads.iter().map(|v| v.as_slice()).collect();
        opt.step(&mut params, &g);
        drop(params);
        for l in layers {
            l.repack();
        }
    }
}

/// Mean bits/voxel of a model over a dataset.
pub fn evaluate_bits(net: &VoxelDnn, data: &[VoxelBlock]) -> Result<f64> {
    let losses = par::map_slice(data, |b| net.block_loss(b));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len().max(1) as f64)
}

/// FNV-1a over block sides and occupancy, for training metadata.
pub fn dataset_digest(data: &[VoxelBlock]) -> u64 {
    fnv1a64(data.iter().flat_map(|b| {
        (b.side() as u32)
            .to_le_bytes()
            .into_iter()
            .chain(b.bits().iter().copied())
    }))
}

/// Trains a fresh model on `data`.
pub fn train(config: VoxelDnnConfig, data: &[VoxelBlock], tc: &TrainConfig) -> Result<(VoxelDnn, TrainReport)> {
    train_with(config, data, tc, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, loss_bits)` after every epoch.
pub fn train_with(
    config: VoxelDnnConfig,
    data: &[VoxelBlock],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(VoxelDnn, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    if tc.batch_size == 0 || tc.lr.is_nan() || tc.lr <= 0.0 {
        return Err(Error::Parameter("batch size and learning rate must be positive".into()));
    }
    if let Some(b) = data.iter().find(|b| b.side() != config.block_size) {
        return Err(Error::Shape(format!(
            "training block of side {} for a {} model",
            b.side(),
            config.block_size
        )));
    }
    let mut net = VoxelDnn::new(config, tc.seed)?;
    let initial_loss = evaluate_bits(&net, data)?;
    let mut opt = Adam::new(tc.lr, &net.param_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results = par::map_slice(batch, |&i| net.loss_and_grads(&data[i]));
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for r in results {
                let (loss, grads) = r?;
                sum += loss;
                let acc = acc.get_or_insert_with(|| grads.iter().map(|g| vec![0.0; g.len()]).collect());
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, &y) in a.iter_mut().zip(g) {
                        *x += y as f64;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Vec<f32>> = acc
                .unwrap_or_default()
                .into_iter()
                .map(|a| a.into_iter().map(|v| (v * scale) as f32).collect())
                .collect();
            net.apply_adam(&mut opt, &mean);
        }
        let loss = sum / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Parameter(format!("training diverged at epoch {epoch}")));
        }
        on_epoch(epoch, loss);
        epoch_losses.push(loss);
    }
    Ok((
        net,
        TrainReport {
            initial_loss,
            epoch_losses,
        },
    ))
}
