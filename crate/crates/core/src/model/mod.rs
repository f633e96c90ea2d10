//! The occupancy model: a causal stack of masked 3D convolutions that maps a
//! block of voxels to `P(v_i = 1 | v_1 .. v_{i-1})` for every voxel at once.

mod eval;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use eval::{IncrementalEval, Plan};
pub use train::{dataset_digest, evaluate_bits, train, train_with, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::geometry::VoxelBlock;
use crate::nn::{LayerWeights, MaskKind, MaskSpec, MaskedConv3d, ModelWeights, Region, Tensor};

/// Block sizes a model can be built for.
pub const MODEL_SIZES: [usize; 5] = [8, 16, 32, 64, 128];

/// Network shape for one block size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelDnnConfig {
    pub block_size: usize,
    pub filters: usize,
    /// Kernel side of the first (type A) layer.
    pub first_kernel: usize,
    /// Kernel side of the convolutions inside residual blocks (type B).
    pub res_kernel: usize,
    pub res_blocks: usize,
    /// Width of the hidden 1×1×1 head layer before the 2-way output.
    pub head_width: usize,
}

impl VoxelDnnConfig {
    /// Full-size network: 64 filters, 7³ type-A input layer, two residual
    /// blocks of 5³ type-B convolutions, head 64→32→2.
    pub fn full(block_size: usize) -> Self {
        VoxelDnnConfig {
            block_size,
            filters: 64,
            first_kernel: 7,
            res_kernel: 5,
            res_blocks: 2,
            head_width: 32,
        }
    }

    /// Same topology scaled down for single-core CPU training and tests.
    pub fn desk(block_size: usize) -> Self {
        VoxelDnnConfig {
            block_size,
            filters: 8,
            first_kernel: 5,
            res_kernel: 3,
            res_blocks: 2,
            head_width: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !MODEL_SIZES.contains(&self.block_size) {
            return Err(Error::Config(format!(
                "unsupported block size {} (expected one of {MODEL_SIZES:?})",
                self.block_size
            )));
        }
        if self.filters == 0 || self.head_width == 0 {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        for k in [self.first_kernel, self.res_kernel] {
            if k % 2 == 0 || k < 3 {
                return Err(Error::Config(format!("kernel side {k} must be odd and at least 3")));
            }
        }
        Ok(())
    }

    /// How far (in voxels) an output can see back along each axis.
    pub fn receptive_radius(&self) -> usize {
        self.first_kernel / 2 + 2 * self.res_blocks * (self.res_kernel / 2)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv0: MaskedConv3d,
    conv1: MaskedConv3d,
}

/// A built occupancy model.
#[derive(Clone, Debug)]
pub struct VoxelDnn {
    config: VoxelDnnConfig,
    input: MaskedConv3d,
    res: Vec<ResBlock>,
    head0: MaskedConv3d,
    head1: MaskedConv3d,
}

impl VoxelDnn {
    /// Builds a randomly initialised model.
    pub fn new(config: VoxelDnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.filters;
        let a = MaskSpec::new(MaskKind::A, config.first_kernel);
        let b = MaskSpec::new(MaskKind::B, config.res_kernel);
        let b1 = MaskSpec::new(MaskKind::B, 1);
        let input = MaskedConv3d::init(1, f, a, &mut rng);
        let res = (0..config.res_blocks)
            .map(|_| ResBlock {
                conv0: MaskedConv3d::init(f, f, b, &mut rng),
                conv1: MaskedConv3d::init(f, f, b, &mut rng),
            })
            .collect();
        let head0 = MaskedConv3d::init(f, config.head_width, b1, &mut rng);
        let head1 = MaskedConv3d::init(config.head_width, 2, b1, &mut rng);
        Ok(VoxelDnn {
            config,
            input,
            res,
            head0,
            head1,
        })
    }

    pub fn config(&self) -> &VoxelDnnConfig {
        &self.config
    }

    pub fn block_size(&self) -> usize {
        self.config.block_size
    }

    /// Every convolution in forward order.
    pub fn layers(&self) -> Vec<&MaskedConv3d> {
        let mut v = vec![&self.input];
        for r in &self.res {
            v.push(&r.conv0);
            v.push(&r.conv1);
        }
        v.push(&self.head0);
        v.push(&self.head1);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut MaskedConv3d> {
        let mut v = vec![&mut self.input];
        for r in &mut self.res {
            v.push(&mut r.conv0);
            v.push(&mut r.conv1);
        }
        v.push(&mut self.head0);
        v.push(&mut self.head1);
        v
    }

    fn layer_names(&self) -> Vec<String> {
        let mut v = vec!["input".to_string()];
        for i in 0..self.res.len() {
            v.push(format!("res{i}.conv0"));
            v.push(format!("res{i}.conv1"));
        }
        v.push("head0".into());
        v.push("head1".into());
        v
    }

    /// Sets the output layer to zero, making every prediction 0.5.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = self.head1.params_mut();
        w.fill(0.0);
        b.fill(0.0);
        self.head1.repack();
    }

    pub fn to_weights(&self) -> ModelWeights {
        let mut layers = Vec::new();
        for (name, conv) in self.layer_names().into_iter().zip(self.layers()) {
            let k = conv.mask().kernel as u32;
            layers.push(LayerWeights {
                name: format!("{name}.weight"),
                shape: vec![conv.out_channels() as u32, conv.in_channels() as u32, k, k, k],
                values: conv.weight().to_vec(),
            });
            layers.push(LayerWeights {
                name: format!("{name}.bias"),
                shape: vec![conv.out_channels() as u32],
                values: conv.bias().to_vec(),
            });
        }
        ModelWeights {
            block_size: self.config.block_size,
            layers,
        }
    }

    /// Rebuilds a model from weights, inferring the configuration from the
    /// layer shapes and checking every layer against it.
    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        let shape_of = |name: &str| -> Result<&LayerWeights> {
            w.layer(name)
                .ok_or_else(|| Error::Shape(format!("missing layer {name}")))
        };
        let first = shape_of("input.weight")?;
        let head0 = shape_of("head0.weight")?;
        let res_blocks = (0..)
            .take_while(|i| w.layer(&format!("res{i}.conv0.weight")).is_some())
            .count();
        let res_kernel = if res_blocks > 0 {
            *shape_of("res0.conv0.weight")?.shape.get(2).unwrap_or(&0) as usize
        } else {
            3
        };
        let config = VoxelDnnConfig {
            block_size: w.block_size,
            filters: *first.shape.first().unwrap_or(&0) as usize,
            first_kernel: *first.shape.get(2).unwrap_or(&0) as usize,
            res_kernel,
            res_blocks,
            head_width: *head0.shape.first().unwrap_or(&0) as usize,
        };
        config.validate().map_err(|e| Error::Shape(e.to_string()))?;

        let mut net = VoxelDnn::new(config, 0)?;
        let expected = net.to_weights();
        if expected.layers.len() != w.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                expected.layers.len(),
                w.layers.len()
            )));
        }
        for (e, got) in expected.layers.iter().zip(&w.layers) {
            if e.name != got.name || e.shape != got.shape {
                return Err(Error::Shape(format!(
                    "layer {} {:?} does not match architecture ({} {:?})",
                    got.name, got.shape, e.name, e.shape
                )));
            }
        }
        for (i, conv) in net.layers_mut().into_iter().enumerate() {
            let (wv, bv) = conv.params_mut();
            wv.copy_from_slice(&w.layers[2 * i].values);
            bv.copy_from_slice(&w.layers[2 * i + 1].values);
            conv.repack();
        }
        Ok(net)
    }

    pub fn arch_hash(&self) -> u64 {
        self.to_weights().arch_hash()
    }

    /// Occupancy probabilities for every voxel of a block of the model's size.
    pub fn predict_block(&self, block: &VoxelBlock) -> Result<Vec<f64>> {
        let d = self.config.block_size;
        if block.side() != d {
            return Err(Error::Shape(format!(
                "model for block {d} given a block of side {}",
                block.side()
            )));
        }
        let volume = Region::cube(d);
        let plan = Plan::new(self, volume, volume);
        let x = Tensor::from_occupancy(d, block.bits());
        self.predict_region(&x, &plan)
    }

    /// Probabilities for `block` placed at the origin corner of an otherwise
    /// empty cube of the model's size.
    pub fn predict_small(&self, block: &VoxelBlock) -> Result<Vec<f64>> {
        let big = self.config.block_size;
        let s = block.side();
        if s >= big {
            return Err(Error::Config(format!(
                "block {s} cannot be placed inside model size {big}"
            )));
        }
        let volume = Region::cube(big);
        let target = Region::cube(s);
        let plan = Plan::new(self, volume, target);
        let mut x = Tensor::zeros(1, plan.input_region());
        for i in 0..block.len() {
            if block.bits()[i] != 0 {
                let [a, b, c] = block.coord(i);
                x.at_mut([a as i64, b as i64, c as i64])[0] = 1.0;
            }
        }
        self.predict_region(&x, &plan)
    }
}

/// Builds a model for `config`, returning its weights.
pub fn build_model(config: VoxelDnnConfig, seed: u64) -> Result<ModelWeights> {
    Ok(VoxelDnn::new(config, seed)?.to_weights())
}

/// Single-model mode readout: `block` (side 8, 16 or 32) inside a zeroed
/// 64-block, predicted with the 64 model.
pub fn predict_small_in_64(model64: &VoxelDnn, block: &VoxelBlock) -> Result<Vec<f64>> {
    if model64.block_size() != 64 {
        return Err(Error::Config(format!(
            "single-model mode needs the 64 model, got {}",
            model64.block_size()
        )));
    }
    if !matches!(block.side(), 4 | 8 | 16 | 32) {
        return Err(Error::Config(format!(
            "block {} cannot be placed inside a 64-block",
            block.side()
        )));
    }
    model64.predict_small(block)
}
