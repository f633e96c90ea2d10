//! Synthetic shapes for desk-scale training corpora and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Voxel, VoxelBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// One-voxel-thick axis-aligned plane through a random offset.
    AxisPlane,
    /// Thin plane with a random normal through a random point.
    TiltedPlane,
    /// Spherical shell.
    Sphere,
    /// Axis-aligned solid box.
    SolidCube,
    /// Independent occupancy at a fixed probability.
    Noise,
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "plane" | "axis-plane" => Shape::AxisPlane,
            "tilted-plane" => Shape::TiltedPlane,
            "sphere" => Shape::Sphere,
            "cube" => Shape::SolidCube,
            "noise" => Shape::Noise,
            _ => return Err(format!("unknown shape '{s}'")),
        })
    }
}

/// Points of a thin surface `n·p = c` inside `[lo, hi)³` (voxels within half a
/// unit of the plane along its dominant axis).
pub fn plane_points(lo: [i64; 3], hi: [i64; 3], normal: [f64; 3], point: [f64; 3]) -> Vec<Voxel> {
    let dom = (0..3)
        .max_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs()))
        .unwrap();
    let (u, v) = match dom {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let c = normal[0] * point[0] + normal[1] * point[1] + normal[2] * point[2];
    let mut out = Vec::new();
    for a in lo[u]..hi[u] {
        for b in lo[v]..hi[v] {
            let t = (c - normal[u] * a as f64 - normal[v] * b as f64) / normal[dom];
            let w = (t + 0.5).floor() as i64;
            if w >= lo[dom] && w < hi[dom] {
                let mut p = [0u32; 3];
                p[u] = a as u32;
                p[v] = b as u32;
                p[dom] = w as u32;
                out.push(p);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Draws one block of `side` with the given shape.
pub fn block(shape: Shape, side: usize, rng: &mut impl Rng) -> VoxelBlock {
    let s = side as i64;
    let pts: Vec<Voxel> = match shape {
        Shape::AxisPlane => {
            let axis = rng.random_range(0..3);
            let mut normal = [0.0; 3];
            normal[axis] = 1.0;
            let off = rng.random_range(0..s) as f64;
            plane_points([0; 3], [s; 3], normal, [off; 3])
        }
        Shape::TiltedPlane => {
            let mut normal = [0.0; 3];
            for n in &mut normal {
                *n = rng.random_range(-1.0..1.0);
            }
            normal[rng.random_range(0..3)] += 1.5;
            let point = [
                rng.random_range(0.0..s as f64),
                rng.random_range(0.0..s as f64),
                rng.random_range(0.0..s as f64),
            ];
            plane_points([0; 3], [s; 3], normal, point)
        }
        Shape::Sphere => {
            let c = [
                rng.random_range(0.0..s as f64),
                rng.random_range(0.0..s as f64),
                rng.random_range(0.0..s as f64),
            ];
            let r = rng.random_range(s as f64 / 4.0..s as f64);
            let mut v = Vec::new();
            for x in 0..s {
                for y in 0..s {
                    for z in 0..s {
                        let d = ((x as f64 - c[0]).powi(2)
                            + (y as f64 - c[1]).powi(2)
                            + (z as f64 - c[2]).powi(2))
                        .sqrt();
                        if (d - r).abs() < 0.5 {
                            v.push([x as u32, y as u32, z as u32]);
                        }
                    }
                }
            }
            v
        }
        Shape::SolidCube => {
            let mut lo = [0i64; 3];
            let mut hi = [0i64; 3];
            for a in 0..3 {
                lo[a] = rng.random_range(0..s);
                hi[a] = rng.random_range(lo[a] + 1..=s);
            }
            let mut v = Vec::new();
            for x in lo[0]..hi[0] {
                for y in lo[1]..hi[1] {
                    for z in lo[2]..hi[2] {
                        v.push([x as u32, y as u32, z as u32]);
                    }
                }
            }
            v
        }
        Shape::Noise => {
            let p: f64 = rng.random_range(0.001..0.2);
            let mut v = Vec::new();
            for x in 0..s {
                for y in 0..s {
                    for z in 0..s {
                        if rng.random_bool(p) {
                            v.push([x as u32, y as u32, z as u32]);
                        }
                    }
                }
            }
            v
        }
    };
    VoxelBlock::from_points(side, &pts).expect("generated points are inside the block")
}

/// Draws `count` non-empty blocks of one shape from a seeded generator.
pub fn corpus(shape: Shape, side: usize, count: usize, seed: u64) -> Vec<VoxelBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let b = block(shape, side, &mut rng);
        if b.count() > 0 {
            out.push(b);
        }
    }
    out
}

/// Uniform random occupancy at `density` inside the box `[origin, origin+size)`.
pub fn noise_box(origin: [u32; 3], size: [u32; 3], density: f64, rng: &mut impl Rng) -> Vec<Voxel> {
    let mut v = Vec::new();
    for x in 0..size[0] {
        for y in 0..size[1] {
            for z in 0..size[2] {
                if rng.random_bool(density) {
                    v.push([origin[0] + x, origin[1] + y, origin[2] + z]);
                }
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_plane_has_one_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let b = block(Shape::AxisPlane, 16, &mut rng);
            assert_eq!(b.count(), 256);
        }
    }

    #[test]
    fn corpus_is_seeded() {
        let a = corpus(Shape::TiltedPlane, 8, 5, 9);
        let b = corpus(Shape::TiltedPlane, 8, 5, 9);
        assert_eq!(a, b);
        assert!(a.iter().all(|b| b.count() > 0));
    }

    #[test]
    fn plane_points_axis() {
        let p = plane_points([0; 3], [4; 3], [0.0, 0.0, 1.0], [0.0, 0.0, 2.0]);
        assert_eq!(p.len(), 16);
        assert!(p.iter().all(|v| v[2] == 2));
    }
}
