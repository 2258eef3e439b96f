//! Resampling kernels: trilinear interpolation, center-anchored affine
//! warps, cubic B-spline upsampling of coarse displacement grids, and
//! dense displacement-field warping.
//!
//! All warps use the inverse-mapping convention (each output voxel pulls
//! from a continuous input location) with fill value 0.0 outside the
//! input domain. Interpolation arithmetic runs in f64; resampled voxels
//! are stored as f32.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume3;

/// Row-major 4x4 affine with fixed (0,0,0,1) bottom row, mapping output
/// voxel coordinates to input voxel coordinates (inverse convention).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine4 {
    m: [f64; 16],
}

impl Affine4 {
    pub fn new(m: [f64; 16]) -> Result<Self> {
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::ShapeMismatch(
                "affine bottom row must be (0,0,0,1)".into(),
            ));
        }
        let a = Affine4 { m };
        if a.det3() == 0.0 {
            return Err(Error::SingularMatrix);
        }
        Ok(a)
    }

    pub fn identity() -> Self {
        let mut m = [0.0; 16];
        m[0] = 1.0;
        m[5] = 1.0;
        m[10] = 1.0;
        m[15] = 1.0;
        Affine4 { m }
    }

    /// Rotation R = Rz(az) * Ry(ay) * Rx(ax), angles in degrees.
    pub fn rotation_xyz(ax_deg: f64, ay_deg: f64, az_deg: f64) -> Self {
        let (sx, cx) = ax_deg.to_radians().sin_cos();
        let (sy, cy) = ay_deg.to_radians().sin_cos();
        let (sz, cz) = az_deg.to_radians().sin_cos();
        // Rows of Rz*Ry*Rx, expanded.
        let r = [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ];
        let mut m = [0.0; 16];
        for (i, row) in r.iter().enumerate() {
            m[4 * i..4 * i + 3].copy_from_slice(row);
        }
        m[15] = 1.0;
        Affine4 { m }
    }

    pub fn scaling(sx: f64, sy: f64, sz: f64) -> Self {
        let mut m = [0.0; 16];
        m[0] = sx;
        m[5] = sy;
        m[10] = sz;
        m[15] = 1.0;
        Affine4 { m }
    }

    /// Transpose of the 3x3 linear part (the inverse of a rotation).
    pub fn transposed_linear(&self) -> Self {
        let mut m = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                m[4 * i + j] = self.m[4 * j + i];
            }
        }
        m[15] = 1.0;
        Affine4 { m }
    }

    pub fn det3(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8])
            + m[2] * (m[4] * m[9] - m[5] * m[8])
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    pub fn as_array(&self) -> &[f64; 16] {
        &self.m
    }
}

/// Trilinear interpolation at a continuous point in voxel coordinates.
///
/// Any point with a coordinate outside [0, n-1] on its axis returns 0.0.
pub fn trilinear_sample(vol: &Volume3, p: [f64; 3]) -> f64 {
    let (nx, ny, nz) = vol.shape();
    let dims = [nx, ny, nz];
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let n = dims[a];
        let c = p[a];
        if !(c >= 0.0 && c <= (n - 1) as f64) {
            return 0.0;
        }
        if n == 1 {
            base[a] = 0;
            frac[a] = 0.0;
        } else {
            let i = (c.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = c - i as f64;
        }
    }

    let (x0, y0, z0) = (base[0], base[1], base[2]);
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let z1 = (z0 + 1).min(nz - 1);
    let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);

    let v = |x: usize, y: usize, z: usize| vol.get(x, y, z) as f64;
    v(x0, y0, z0) * gx * gy * gz
        + v(x1, y0, z0) * fx * gy * gz
        + v(x0, y1, z0) * gx * fy * gz
        + v(x1, y1, z0) * fx * fy * gz
        + v(x0, y0, z1) * gx * gy * fz
        + v(x1, y0, z1) * fx * gy * fz
        + v(x0, y1, z1) * gx * fy * fz
        + v(x1, y1, z1) * fx * fy * fz
}

/// Resample through an affine anchored at the volume center: for every
/// output voxel p, out[p] = sample(input, m * (p - c) + c).
pub fn warp_affine(vol: &Volume3, m: &Affine4) -> Result<Volume3> {
    if m.det3() == 0.0 {
        return Err(Error::SingularMatrix);
    }
    let (nx, ny, nz) = vol.shape();
    let c = vol.center();
    let mut out = vec![0.0f32; nx * ny * nz];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let rel = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                let q = m.apply(rel);
                let src = [q[0] + c[0], q[1] + c[1], q[2] + c[2]];
                slab[y * nx + x] = trilinear_sample(vol, src) as f32;
            }
        }
    });
    Volume3::new((nx, ny, nz), out)
}

/// Coarse grid of control-point displacements (units: voxels).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ControlGrid {
    shape: (usize, usize, usize),
    disp: Vec<[f32; 3]>,
}

impl ControlGrid {
    pub fn new(shape: (usize, usize, usize), disp: Vec<[f32; 3]>) -> Result<Self> {
        let (gx, gy, gz) = shape;
        if gx < 2 || gy < 2 || gz < 2 {
            return Err(Error::GridTooSmall(shape));
        }
        if disp.len() != gx * gy * gz {
            return Err(Error::ShapeMismatch(format!(
                "grid {shape:?} needs {} displacements, got {}",
                gx * gy * gz,
                disp.len()
            )));
        }
        Ok(ControlGrid { shape, disp })
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Result<Self> {
        let (gx, gy, gz) = shape;
        Self::new(shape, vec![[0.0; 3]; gx * gy * gz])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn displacements(&self) -> &[[f32; 3]] {
        &self.disp
    }

    #[inline]
    fn at(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        let (gx, gy, _) = self.shape;
        self.disp[x + gx * (y + gy * z)]
    }

    /// Largest absolute displacement component over the whole grid.
    pub fn max_abs_component(&self) -> f32 {
        self.disp
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0f32, |acc, &v| acc.max(v.abs()))
    }
}

/// Dense per-voxel displacement vectors: sample input at p + d(p).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    shape: (usize, usize, usize),
    vecs: Vec<[f32; 3]>,
}

impl DisplacementField {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn vectors(&self) -> &[[f32; 3]] {
        &self.vecs
    }
}

/// Cubic B-spline basis at fractional offset t in [0, 1).
#[inline]
fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Per-axis tap table: for each output coordinate, the base control index
/// and the 4 basis weights. Control points are equally spaced spanning
/// [0, n-1]; border control values are replicated for the spline support.
fn axis_taps(n: usize, g: usize) -> Vec<(isize, [f64; 4])> {
    (0..n)
        .map(|x| {
            let u = if n == 1 {
                0.0
            } else {
                x as f64 * (g as f64 - 1.0) / (n as f64 - 1.0)
            };
            let i = u.floor();
            let t = u - i;
            (i as isize - 1, bspline_weights(t))
        })
        .collect()
}

/// Upsample a coarse control grid to a dense displacement field by
/// separable cubic B-spline evaluation with clamped borders.
///
/// The control values serve directly as spline coefficients, so every
/// field vector is a convex combination of control displacements and
/// each output component is bounded by the largest control component.
pub fn bspline_upsample(
    grid: &ControlGrid,
    target_shape: (usize, usize, usize),
) -> Result<DisplacementField> {
    let (gx, gy, gz) = grid.shape();
    if gx < 2 || gy < 2 || gz < 2 {
        return Err(Error::GridTooSmall(grid.shape()));
    }
    let (nx, ny, nz) = target_shape;
    let tx = axis_taps(nx, gx);
    let ty = axis_taps(ny, gy);
    let tz = axis_taps(nz, gz);
    let clamp = |i: isize, g: usize| i.clamp(0, g as isize - 1) as usize;

    let mut vecs = vec![[0.0f32; 3]; nx * ny * nz];
    vecs.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        let (bz, wz) = tz[z];
        for y in 0..ny {
            let (by, wy) = ty[y];
            for x in 0..nx {
                let (bx, wx) = tx[x];
                let mut acc = [0.0f64; 3];
                for (kz, &wkz) in wz.iter().enumerate() {
                    let cz = clamp(bz + kz as isize, gz);
                    for (ky, &wky) in wy.iter().enumerate() {
                        let cy = clamp(by + ky as isize, gy);
                        let wzy = wkz * wky;
                        for (kx, &wkx) in wx.iter().enumerate() {
                            let cx = clamp(bx + kx as isize, gx);
                            let w = wzy * wkx;
                            let d = grid.at(cx, cy, cz);
                            acc[0] += w * d[0] as f64;
                            acc[1] += w * d[1] as f64;
                            acc[2] += w * d[2] as f64;
                        }
                    }
                }
                slab[y * nx + x] = [acc[0] as f32, acc[1] as f32, acc[2] as f32];
            }
        }
    });
    Ok(DisplacementField {
        shape: target_shape,
        vecs,
    })
}

/// Warp through a dense displacement field: out[p] = sample(input, p + d(p)).
pub fn warp_displacement(vol: &Volume3, field: &DisplacementField) -> Result<Volume3> {
    if field.shape() != vol.shape() {
        return Err(Error::ShapeMismatch(format!(
            "field shape {:?} != volume shape {:?}",
            field.shape(),
            vol.shape()
        )));
    }
    let (nx, ny, nz) = vol.shape();
    let mut out = vec![0.0f32; nx * ny * nz];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let d = field.vecs[x + nx * (y + ny * z)];
                let src = [
                    x as f64 + d[0] as f64,
                    y as f64 + d[1] as f64,
                    z as f64 + d[2] as f64,
                ];
                slab[y * nx + x] = trilinear_sample(vol, src) as f32;
            }
        }
    });
    Volume3::new((nx, ny, nz), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn ramp_x(shape: (usize, usize, usize)) -> Volume3 {
        Volume3::from_fn(shape, |x, _, _| x as f32)
    }

    #[test]
    fn nodes_reproduce_exactly() {
        let mut rng = RngStream::new(1);
        let vol = Volume3::from_fn((4, 3, 5), |_, _, _| rng.uniform(-5.0, 5.0) as f32);
        for z in 0..5 {
            for y in 0..3 {
                for x in 0..4 {
                    let s = trilinear_sample(&vol, [x as f64, y as f64, z as f64]);
                    assert_eq!(s as f32, vol.get(x, y, z));
                }
            }
        }
    }

    #[test]
    fn midpoint_average() {
        let mut vol = Volume3::zeros((2, 1, 1));
        vol.set(1, 0, 0, 2.0);
        assert_eq!(trilinear_sample(&vol, [0.5, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn out_of_range_returns_fill() {
        let vol = Volume3::from_fn((3, 3, 3), |_, _, _| 7.0);
        assert_eq!(trilinear_sample(&vol, [-0.001, 1.0, 1.0]), 0.0);
        assert_eq!(trilinear_sample(&vol, [1.0, 2.001, 1.0]), 0.0);
        assert_eq!(trilinear_sample(&vol, [1.0, 1.0, 3.0]), 0.0);
        // the closed boundary itself is in range
        assert_eq!(trilinear_sample(&vol, [2.0, 2.0, 2.0]), 7.0);
        assert_eq!(trilinear_sample(&vol, [0.0, 0.0, 0.0]), 7.0);
    }

    #[test]
    fn exact_on_trilinear_polynomials() {
        // f(x,y,z) = 2x + 3y - z + 5 plus cross terms; trilinear in each var.
        let f = |x: f64, y: f64, z: f64| {
            5.0 + 2.0 * x + 3.0 * y - z + 0.5 * x * y - 0.25 * y * z + 0.125 * x * y * z
        };
        let vol = Volume3::from_fn((7, 6, 5), |x, y, z| f(x as f64, y as f64, z as f64) as f32);
        let mut rng = RngStream::new(2);
        for _ in 0..2000 {
            let p = [
                rng.uniform(0.0, 6.0),
                rng.uniform(0.0, 5.0),
                rng.uniform(0.0, 4.0),
            ];
            let want = f(p[0], p[1], p[2]);
            let got = trilinear_sample(&vol, p);
            let rel = (got - want).abs() / want.abs().max(1.0);
            assert!(rel < 1e-5, "p={p:?} got={got} want={want}");
        }
    }

    #[test]
    fn identity_warp_is_bit_identical() {
        let mut rng = RngStream::new(3);
        let vol = Volume3::from_fn((9, 8, 7), |_, _, _| rng.uniform(-3.0, 3.0) as f32);
        let out = warp_affine(&vol, &Affine4::identity()).unwrap();
        assert_eq!(out.voxels(), vol.voxels());
    }

    #[test]
    fn rotating_a_constant_keeps_the_interior_constant() {
        let vol = Volume3::from_fn((12, 12, 12), |_, _, _| 4.5);
        let rot = Affine4::rotation_xyz(30.0, -20.0, 45.0);
        let out = warp_affine(&vol, &rot.transposed_linear()).unwrap();
        let c = vol.center();
        let r = 3.0; // sphere radius min(n)/4
        for z in 0..12 {
            for y in 0..12 {
                for x in 0..12 {
                    let d2 = (x as f64 - c[0]).powi(2)
                        + (y as f64 - c[1]).powi(2)
                        + (z as f64 - c[2]).powi(2);
                    if d2 <= r * r {
                        let v = out.get(x, y, z);
                        assert!((v - 4.5).abs() < 1e-5, "({x},{y},{z}) -> {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn center_anchored_scaling_maps_analytically() {
        // Inverse map scales by 0.5 on x: out[p] = in[c + 0.5*(p - c)].
        let vol = ramp_x((11, 5, 5));
        let m = Affine4::scaling(0.5, 1.0, 1.0);
        let out = warp_affine(&vol, &m).unwrap();
        let cx = 5.0;
        for x in 0..11 {
            let want = cx + 0.5 * (x as f64 - cx);
            let got = out.get(x, 2, 2) as f64;
            assert!((got - want).abs() < 1e-5, "x={x} got={got} want={want}");
        }
        // center column equals the input center column
        assert_eq!(out.get(5, 2, 2), vol.get(5, 2, 2));
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let vol = Volume3::zeros((3, 3, 3));
        let m = Affine4 { m: [0.0; 16] };
        assert!(matches!(
            warp_affine(&vol, &m),
            Err(crate::error::Error::SingularMatrix)
        ));
        assert!(Affine4::new([0.0; 16]).is_err());
    }

    #[test]
    fn zero_grid_gives_zero_field() {
        let grid = ControlGrid::zeros((4, 4, 4)).unwrap();
        let field = bspline_upsample(&grid, (10, 11, 12)).unwrap();
        assert!(field.vectors().iter().all(|v| *v == [0.0, 0.0, 0.0]));
    }

    #[test]
    fn constant_grid_reproduces_constant_field() {
        let (gx, gy, gz) = (3, 4, 5);
        let grid = ControlGrid::new((gx, gy, gz), vec![[2.5, -1.0, 0.75]; gx * gy * gz]).unwrap();
        let field = bspline_upsample(&grid, (9, 10, 11)).unwrap();
        for v in field.vectors() {
            assert!((v[0] - 2.5).abs() < 1e-6);
            assert!((v[1] + 1.0).abs() < 1e-6);
            assert!((v[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn convex_hull_bound_holds() {
        let mut rng = RngStream::new(5);
        for trial in 0..20 {
            let shape = (
                2 + (trial % 3) as usize,
                2 + (trial % 4) as usize,
                2 + (trial % 2) as usize,
            );
            let n = shape.0 * shape.1 * shape.2;
            let disp: Vec<[f32; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.normal(4.0) as f32,
                        rng.normal(4.0) as f32,
                        rng.normal(4.0) as f32,
                    ]
                })
                .collect();
            let grid = ControlGrid::new(shape, disp).unwrap();
            let bound = grid.max_abs_component();
            let field = bspline_upsample(&grid, (8, 9, 7)).unwrap();
            for v in field.vectors() {
                for c in v {
                    assert!(c.abs() <= bound, "|{c}| > {bound}");
                }
            }
        }
    }

    #[test]
    fn grid_too_small_is_rejected() {
        assert!(matches!(
            ControlGrid::zeros((1, 4, 4)),
            Err(crate::error::Error::GridTooSmall(_))
        ));
    }

    #[test]
    fn zero_field_warp_is_bit_identical() {
        let mut rng = RngStream::new(6);
        let vol = Volume3::from_fn((6, 7, 8), |_, _, _| rng.uniform(-2.0, 2.0) as f32);
        let grid = ControlGrid::zeros((4, 4, 4)).unwrap();
        let field = bspline_upsample(&grid, vol.shape()).unwrap();
        let out = warp_displacement(&vol, &field).unwrap();
        assert_eq!(out.voxels(), vol.voxels());
    }

    #[test]
    fn uniform_field_translates_a_ramp() {
        let vol = ramp_x((10, 4, 4));
        let field = DisplacementField {
            shape: (10, 4, 4),
            vecs: vec![[1.0, 0.0, 0.0]; 160],
        };
        let out = warp_displacement(&vol, &field).unwrap();
        // interior voxels shifted by one: out[x] = in[x+1] = x+1
        for x in 0..9 {
            assert_eq!(out.get(x, 2, 2), (x + 1) as f32);
        }
        // last column sampled out of range -> fill
        assert_eq!(out.get(9, 2, 2), 0.0);
    }

    #[test]
    fn field_sending_everything_out_of_range_zeroes_the_volume() {
        let vol = Volume3::from_fn((4, 4, 4), |_, _, _| 9.0);
        let field = DisplacementField {
            shape: (4, 4, 4),
            vecs: vec![[100.0, 0.0, 0.0]; 64],
        };
        let out = warp_displacement(&vol, &field).unwrap();
        assert!(out.voxels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_shape_mismatch_is_rejected() {
        let vol = Volume3::zeros((4, 4, 4));
        let field = DisplacementField {
            shape: (4, 4, 5),
            vecs: vec![[0.0; 3]; 80],
        };
        assert!(matches!(
            warp_displacement(&vol, &field),
            Err(crate::error::Error::ShapeMismatch(_))
        ));
    }
}
