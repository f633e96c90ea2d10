//! Training-set augmentation: rotations about the block centre and random
//! subsampling.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Voxel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    /// Rotation angles in degrees, each applied about x, y and z in turn.
    pub angles_deg: Vec<f64>,
    /// Sampling rates in `(0, 1]`; the unsampled variant is always kept.
    pub sampling_rates: Vec<f64>,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            angles_deg: vec![45.0],
            sampling_rates: vec![0.7, 0.4],
            seed: 0,
        }
    }
}

impl AugmentParams {
    /// Number of variants produced per block.
    pub fn variant_count(&self) -> usize {
        (1 + 3 * self.angles_deg.len()) * (1 + self.sampling_rates.len())
    }
}

fn rotation(axis: usize, deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    match axis {
        0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

/// Rotates points about the block centre `side/2`, rounds half-up and drops
/// points that leave `[0, side)`. Output is sorted and unique.
pub(crate) fn rotate(points: &[Voxel], side: usize, m: &[[f64; 3]; 3]) -> Vec<Voxel> {
    let c = side as f64 / 2.0;
    let mut out: Vec<Voxel> = points
        .iter()
        .filter_map(|p| {
            let v = [p[0] as f64 - c, p[1] as f64 - c, p[2] as f64 - c];
            let mut q = [0u32; 3];
            for (r, row) in m.iter().enumerate() {
                let t = (row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + c + 0.5).floor();
                if t < 0.0 || t >= side as f64 {
                    return None;
                }
                q[r] = t as u32;
            }
            Some(q)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn subsample(points: &[Voxel], rate: f64, seed: u64) -> Vec<Voxel> {
    let keep = ((points.len() as f64) * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, points.len(), keep.min(points.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Expands one block's points into rotated and subsampled variants.
///
/// Variant order: for each of `[identity, rot_x(a), rot_y(a), rot_z(a), ...]`,
/// the full set followed by one subsample per rate.
pub fn augment(points: &[Voxel], side: usize, params: &AugmentParams) -> Result<Vec<Vec<Voxel>>> {
    if let Some(r) = params
        .sampling_rates
        .iter()
        .find(|&&r| !(r > 0.0 && r <= 1.0))
    {
        return Err(Error::Parameter(format!("sampling rate {r} outside (0, 1]")));
    }
    if let Some(p) = points.iter().find(|p| p.iter().any(|&c| c as usize >= side)) {
        return Err(Error::Parameter(format!("point {p:?} outside a block of side {side}")));
    }
    let mut base = points.to_vec();
    base.sort_unstable();
    base.dedup();

    let mut rotated = vec![base];
    for &a in &params.angles_deg {
        for axis in 0..3 {
            rotated.push(rotate(&rotated[0], side, &rotation(axis, a)));
        }
    }

    let mut out = Vec::with_capacity(params.variant_count());
    for (ri, pts) in rotated.into_iter().enumerate() {
        for (si, &rate) in params.sampling_rates.iter().enumerate() {
            let seed = params
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((ri * 64 + si) as u64);
            out.push(subsample(&pts, rate, seed));
        }
        out.insert(out.len() - params.sampling_rates.len(), pts);
    }
    Ok(out)
}
