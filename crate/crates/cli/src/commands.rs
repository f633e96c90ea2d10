use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use voxelcodec::bitstream::bpov_report;
use voxelcodec::codec::{decode_cloud, encode_cloud};
use voxelcodec::geometry::synth::{corpus, Shape};
use voxelcodec::geometry::{augment, ply, voxelize, PointCloud, Voxel, VoxelBlock};
use voxelcodec::model::{dataset_digest, train_with, TrainConfig, VoxelDnn, VoxelDnnConfig};
use voxelcodec::nn::ModelWeights;
use voxelcodec::partition::ModelSet;

use crate::config::CodecConfig;

/// Reads a PLY whose coordinates are already voxel indices.
fn read_voxels(path: &Path) -> Result<Option<Vec<Voxel>>> {
    let raw = ply::read_ply(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::with_capacity(raw.points.len());
    for p in &raw.points {
        if p.iter().any(|&c| c < 0.0 || c.fract() != 0.0 || c > u32::MAX as f64) {
            return Ok(None);
        }
        out.push(p.map(|c| c as u32));
    }
    Ok(Some(out))
}

fn min_depth(points: &[Voxel]) -> u32 {
    let max = points.iter().flatten().copied().max().unwrap_or(0);
    (32 - max.leading_zeros()).max(1)
}

/// Loads a cloud for coding: integer coordinates are used as they are,
/// anything else is voxelized at `depth`.
pub fn load_cloud(path: &Path, depth: Option<u32>) -> Result<PointCloud> {
    match (read_voxels(path)?, depth) {
        (Some(points), d) => {
            let need = min_depth(&points);
            let depth = match d {
                Some(d) if d < need => bail!(
                    "{} has integer coordinates needing depth {need}, more than the configured {d}",
                    path.display()
                ),
                Some(d) => d,
                None => need.max(7),
            };
            Ok(PointCloud::new(points, depth)?)
        }
        (None, Some(d)) => Ok(voxelize(&ply::read_ply(path)?, d)?),
        (None, None) => bail!(
            "{} is not voxelized; set a depth to voxelize it",
            path.display()
        ),
    }
}

pub fn load_models(cfg: &CodecConfig) -> Result<ModelSet> {
    let mut set = ModelSet::new();
    for (&size, path) in &cfg.models {
        let w = ModelWeights::load(path).with_context(|| format!("loading model {}", path.display()))?;
        let net = VoxelDnn::from_weights(&w)?;
        if net.block_size() != size {
            bail!(
                "{} holds a model for block {}, configured as {size}",
                path.display(),
                net.block_size()
            );
        }
        set.insert(net);
    }
    Ok(set)
}

fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    Ok(files)
}

fn write_voxels(path: &Path, points: &[Voxel]) -> Result<()> {
    let pts: Vec<[f64; 3]> = points.iter().map(|p| p.map(|c| c as f64)).collect();
    ply::write_ply(path, &pts).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn voxelize_cmd(input: &Path, output: &Path, depth: u32) -> Result<()> {
    let raw = ply::read_ply(input).with_context(|| format!("reading {}", input.display()))?;
    let pc = voxelize(&raw, depth)?;
    ply::write_point_cloud(output, &pc)?;
    info!("{} points -> {} voxels at depth {depth}", raw.points.len(), pc.len());
    Ok(())
}

/// Splits every cloud in `input` into blocks of `side` and writes the
/// augmented variants of each block in block-local coordinates.
pub fn augment_cmd(input: &Path, output: &Path, side: usize, cfg: &CodecConfig) -> Result<usize> {
    let params = cfg.augment_params();
    fs::create_dir_all(output)?;
    let mut written = 0;
    for file in ply_files(input)? {
        let points = read_voxels(&file)?
            .with_context(|| format!("{} is not voxelized", file.display()))?;
        let pc = PointCloud::new(points.clone(), min_depth(&points))?;
        let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        for (origin, block) in pc.blocks(side) {
            let variants = augment(&block.points(), side, &params)?;
            for (k, v) in variants.iter().enumerate() {
                if v.is_empty() {
                    continue;
                }
                let name = format!("{stem}_{}_{}_{}_v{k:02}.ply", origin[0], origin[1], origin[2]);
                write_voxels(&output.join(name), v)?;
                written += 1;
            }
        }
    }
    info!("wrote {written} block files to {}", output.display());
    Ok(written)
}

pub fn synth_cmd(output: &Path, shape: Shape, side: usize, count: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(output)?;
    for (k, b) in corpus(shape, side, count, seed).iter().enumerate() {
        write_voxels(&output.join(format!("synth_{k:05}.ply")), &b.points())?;
    }
    info!("wrote {count} blocks of side {side} to {}", output.display());
    Ok(())
}

pub struct TrainArgs {
    pub blocks: PathBuf,
    pub output: PathBuf,
    pub block_size: usize,
    pub config: VoxelDnnConfig,
    pub train: TrainConfig,
}

pub fn load_blocks(dir: &Path, side: usize) -> Result<Vec<VoxelBlock>> {
    let mut out = Vec::new();
    for file in ply_files(dir)? {
        let points = read_voxels(&file)?
            .with_context(|| format!("{} is not voxelized", file.display()))?;
        let b = VoxelBlock::from_points(side, &points)
            .with_context(|| format!("{} does not fit a block of side {side}", file.display()))?;
        out.push(b);
    }
    if out.is_empty() {
        bail!("no .ply blocks in {}", dir.display());
    }
    Ok(out)
}

pub fn meta_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let data = load_blocks(&a.blocks, a.block_size)?;
    info!(
        "training block {} on {} blocks: lr {}, {} epochs, batch {}",
        a.block_size,
        data.len(),
        a.train.lr,
        a.train.epochs,
        a.train.batch_size
    );
    let t = Instant::now();
    let (net, report) = train_with(a.config, &data, &a.train, |e, l| {
        info!("epoch {e}: {l:.5} bits/voxel ({:.0} s)", t.elapsed().as_secs_f64())
    })?;
    net.to_weights().save(&a.output)?;

    let mut meta = String::new();
    writeln!(meta, "block_size = {}", a.block_size)?;
    writeln!(meta, "seed = {}", a.train.seed)?;
    writeln!(meta, "epochs = {}", a.train.epochs)?;
    writeln!(meta, "lr = {}", a.train.lr)?;
    writeln!(meta, "batch_size = {}", a.train.batch_size)?;
    writeln!(meta, "blocks = {}", data.len())?;
    writeln!(meta, "dataset_digest = {:016x}", dataset_digest(&data))?;
    writeln!(meta, "arch_hash = {:016x}", net.arch_hash())?;
    writeln!(meta, "initial_loss = {}", report.initial_loss)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        writeln!(meta, "epoch.{e} = {l}")?;
    }
    fs::write(meta_path(&a.output), meta)?;
    Ok(())
}

pub fn encode_cmd(input: &Path, output: &Path, cfg: &CodecConfig) -> Result<String> {
    let pc = load_cloud(input, cfg.depth)?;
    let models = load_models(cfg)?;
    let t = Instant::now();
    let enc = encode_cloud(&pc, &models, cfg.options())?;
    fs::write(output, &enc.bytes).with_context(|| format!("writing {}", output.display()))?;
    info!("encoded in {:.1} s", t.elapsed().as_secs_f64());
    let r = bpov_report(&enc.bytes, pc.len())?;
    let a = r.accounting;
    let mut s = String::new();
    writeln!(s, "voxels      {}", pc.len())?;
    writeln!(s, "bytes       {}", enc.bytes.len())?;
    writeln!(s, "bpov        {:.4}", r.bpov)?;
    writeln!(s, "side info   {:.2} %", r.side_info_percent)?;
    writeln!(s, "  header    {} bits", a.header_bits + a.framing_bits)?;
    writeln!(s, "  octree    {} bits", a.octree_bits)?;
    writeln!(s, "  flags     {} bits", a.flag_bits)?;
    writeln!(s, "  modes     {} bits", a.mode_bits)?;
    writeln!(s, "payload     {} bits", a.payload_bits)?;
    Ok(s)
}

pub fn decode_cmd(input: &Path, output: &Path, cfg: &CodecConfig) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let models = load_models(cfg)?;
    let t = Instant::now();
    let pc = decode_cloud(&bytes, &models)?;
    info!("decoded {} voxels in {:.1} s", pc.len(), t.elapsed().as_secs_f64());
    ply::write_point_cloud(output, &pc)?;
    Ok(())
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub voxels: usize,
    pub bytes: usize,
    pub bpov: f64,
    pub side_info_percent: f64,
    pub lossless: bool,
}

pub const CSV_HEADER: &str = "cloud,voxels,bytes,bpov,side_info_percent,lossless";

pub fn eval_cmd(inputs: &[PathBuf], cfg: &CodecConfig, verify: bool) -> Result<String> {
    let models = load_models(cfg)?;
    let mut rows = Vec::new();
    for path in inputs {
        let pc = load_cloud(path, cfg.depth)?;
        let enc = encode_cloud(&pc, &models, cfg.options())?;
        let r = bpov_report(&enc.bytes, pc.len())?;
        let lossless = !verify || decode_cloud(&enc.bytes, &models)? == pc;
        info!("{}: {:.4} bpov", path.display(), r.bpov);
        rows.push(EvalRow {
            name: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            voxels: pc.len(),
            bytes: enc.bytes.len(),
            bpov: r.bpov,
            side_info_percent: r.side_info_percent,
            lossless,
        });
    }
    Ok(format_csv(&rows))
}

/// Rows followed by an `average` row over voxels, bytes, bpov and side info.
pub fn format_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.name, r.voxels, r.bytes, r.bpov, r.side_info_percent, r.lossless
        );
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "average,{},{},{},{},{}",
            mean(&|r| r.voxels as f64),
            mean(&|r| r.bytes as f64),
            mean(&|r| r.bpov),
            mean(&|r| r.side_info_percent),
            rows.iter().all(|r| r.lossless)
        );
    }
    s
}
