//! Randomized volume augmentation: axis flip, per-axis rotation and
//! scaling, power-law brightness remapping, elastic deformation, and
//! ordered composition of any of these.
//!
//! Parameter drawing is split from application: [`draw`] realizes a
//! [`DrawnParams`] from a spec and a deterministic stream, and
//! [`apply_drawn`] executes it. [`apply_pipeline`] chains the two. All
//! operators are pure; identical (spec, stream) pairs produce
//! bit-identical outputs regardless of thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampling::{
    bspline_upsample, warp_affine, warp_displacement, Affine4, ControlGrid,
};
use crate::volume::Volume3;

fn default_flip_probability() -> f64 {
    0.5
}

fn default_elastic_grid() -> (usize, usize, usize) {
    (4, 4, 4)
}

/// Declarative description of one augmentation operator (or a chain).
///
/// The serialized form uses a `kind` tag (`"flip"`, `"rotate"`, `"scale"`,
/// `"brightness"`, `"elastic"`, `"compose"`, `"none"`) with per-kind
/// parameter fields, matching the CLI config schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AugmentSpec {
    #[serde(rename = "none")]
    NoAugment,
    #[serde(rename = "flip")]
    FlipX {
        #[serde(default = "default_flip_probability")]
        probability: f64,
    },
    Rotate {
        max_deg: f64,
    },
    Scale {
        max_frac: f64,
    },
    Brightness {
        lo: f64,
        hi: f64,
    },
    Elastic {
        sigma_vox: f64,
        #[serde(default = "default_elastic_grid")]
        grid: (usize, usize, usize),
    },
    Compose {
        specs: Vec<AugmentSpec>,
    },
}

impl AugmentSpec {
    /// Check every declared range constraint, recursively for chains.
    pub fn validate(&self) -> Result<()> {
        match self {
            AugmentSpec::NoAugment => Ok(()),
            AugmentSpec::FlipX { probability } => {
                if !(*probability >= 0.0 && *probability <= 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "flip probability {probability} outside [0, 1]"
                    )));
                }
                Ok(())
            }
            AugmentSpec::Rotate { max_deg } => {
                if !(*max_deg > 0.0 && max_deg.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "rotation max_deg {max_deg} must be positive and finite"
                    )));
                }
                Ok(())
            }
            AugmentSpec::Scale { max_frac } => {
                if !(*max_frac > 0.0 && *max_frac < 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "scale max_frac {max_frac} outside (0, 1)"
                    )));
                }
                Ok(())
            }
            AugmentSpec::Brightness { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidSpec(format!(
                        "brightness range [{lo}, {hi}] must be finite with lo <= hi"
                    )));
                }
                Ok(())
            }
            AugmentSpec::Elastic { sigma_vox, grid } => {
                if !(*sigma_vox >= 0.0 && sigma_vox.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "elastic sigma_vox {sigma_vox} must be non-negative and finite"
                    )));
                }
                if grid.0 < 2 || grid.1 < 2 || grid.2 < 2 {
                    return Err(Error::GridTooSmall(*grid));
                }
                Ok(())
            }
            AugmentSpec::Compose { specs } => {
                if specs.is_empty() {
                    return Err(Error::InvalidSpec("compose list is empty".into()));
                }
                for s in specs {
                    if matches!(s, AugmentSpec::Compose { .. }) {
                        return Err(Error::InvalidSpec(
                            "compose must not nest another compose".into(),
                        ));
                    }
                    s.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Stable, comma-free identifier used in report rows and file names.
    pub fn label(&self) -> String {
        match self {
            AugmentSpec::NoAugment => "none".into(),
            AugmentSpec::FlipX { probability } => format!("flip({probability})"),
            AugmentSpec::Rotate { max_deg } => format!("rotate({max_deg})"),
            AugmentSpec::Scale { max_frac } => format!("scale({max_frac})"),
            AugmentSpec::Brightness { lo, hi } => format!("brightness({lo}..{hi})"),
            AugmentSpec::Elastic { sigma_vox, grid } => format!(
                "elastic({sigma_vox};{}x{}x{})",
                grid.0, grid.1, grid.2
            ),
            AugmentSpec::Compose { specs } => {
                let parts: Vec<String> = specs.iter().map(|s| s.label()).collect();
                format!("compose({})", parts.join("+"))
            }
        }
    }
}

/// One realization of a spec's random parameters.
///
/// Serializes as a single JSON object tagged by `op`, e.g.
/// `{"op":"rotate","ax":…,"ay":…,"az":…}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DrawnParams {
    #[serde(rename = "none")]
    NoAugment,
    Flip {
        flip: bool,
    },
    Rotate {
        ax: f64,
        ay: f64,
        az: f64,
    },
    Scale {
        sx: f64,
        sy: f64,
        sz: f64,
    },
    Brightness {
        g: f64,
        gamma: f64,
    },
    Elastic {
        grid: ControlGrid,
    },
    Compose {
        parts: Vec<DrawnParams>,
    },
}

/// Realize a spec's parameters from a deterministic stream.
///
/// Draw order is fixed: rotation draws (ax, ay, az); scaling (sx, sy, sz);
/// brightness g then gamma; elastic one (dx, dy, dz) normal triple per
/// control point in x-fastest order. A chain draws each member from the
/// substream `rng.child(i)` for member index i, so one member's draw
/// count never shifts another member's values.
pub fn draw(spec: &AugmentSpec, rng: &mut RngStream) -> Result<DrawnParams> {
    spec.validate()?;
    Ok(match spec {
        AugmentSpec::NoAugment => DrawnParams::NoAugment,
        AugmentSpec::FlipX { probability } => DrawnParams::Flip {
            flip: rng.bernoulli(*probability),
        },
        AugmentSpec::Rotate { max_deg } => DrawnParams::Rotate {
            ax: rng.uniform(-max_deg, *max_deg),
            ay: rng.uniform(-max_deg, *max_deg),
            az: rng.uniform(-max_deg, *max_deg),
        },
        AugmentSpec::Scale { max_frac } => DrawnParams::Scale {
            sx: rng.uniform(1.0 - max_frac, 1.0 + max_frac),
            sy: rng.uniform(1.0 - max_frac, 1.0 + max_frac),
            sz: rng.uniform(1.0 - max_frac, 1.0 + max_frac),
        },
        AugmentSpec::Brightness { lo, hi } => DrawnParams::Brightness {
            g: rng.uniform(*lo, *hi),
            gamma: rng.uniform(*lo, *hi),
        },
        AugmentSpec::Elastic { sigma_vox, grid } => {
            let (gx, gy, gz) = *grid;
            let mut disp = Vec::with_capacity(gx * gy * gz);
            for _ in 0..gx * gy * gz {
                let d = [
                    rng.normal(*sigma_vox) as f32,
                    rng.normal(*sigma_vox) as f32,
                    rng.normal(*sigma_vox) as f32,
                ];
                disp.push(d);
            }
            DrawnParams::Elastic {
                grid: ControlGrid::new(*grid, disp)?,
            }
        }
        AugmentSpec::Compose { specs } => {
            let mut parts = Vec::with_capacity(specs.len());
            for (i, s) in specs.iter().enumerate() {
                let mut sub = rng.child(i as u64);
                parts.push(draw(s, &mut sub)?);
            }
            DrawnParams::Compose { parts }
        }
    })
}

/// Mirror the x axis: index i maps to nx-1-i. `flip = false` is a
/// bit-identical identity.
pub fn apply_flip(vol: &Volume3, flip: bool) -> Volume3 {
    if !flip {
        return vol.clone();
    }
    let (nx, ny, nz) = vol.shape();
    Volume3::from_fn((nx, ny, nz), |x, y, z| vol.get(nx - 1 - x, y, z))
}

/// Rotate about the volume center by R = Rz(az)·Ry(ay)·Rx(ax) (degrees),
/// resampling through the inverse map R-transpose.
pub fn apply_rotation(vol: &Volume3, angles_deg: (f64, f64, f64)) -> Result<Volume3> {
    let r = Affine4::rotation_xyz(angles_deg.0, angles_deg.1, angles_deg.2);
    warp_affine(vol, &r.transposed_linear())
}

/// Scale about the volume center by per-axis factors, resampling through
/// the inverse map diag(1/sx, 1/sy, 1/sz).
pub fn apply_scale(vol: &Volume3, factors: (f64, f64, f64)) -> Result<Volume3> {
    let (sx, sy, sz) = factors;
    if sx == 0.0 || sy == 0.0 || sz == 0.0 {
        return Err(Error::SingularMatrix);
    }
    warp_affine(vol, &Affine4::scaling(1.0 / sx, 1.0 / sy, 1.0 / sz))
}

/// Power-law intensity remap I -> g·sign(I)·|I|^gamma.
///
/// The sign-preserving form extends the non-negative-input formula
/// g·I^gamma to the negative values that derivative maps can contain;
/// it is continuous and odd, and gamma = 1 reduces to plain gain.
pub fn apply_brightness(vol: &Volume3, g: f64, gamma: f64) -> Volume3 {
    let shape = vol.shape();
    let voxels = vol
        .voxels()
        .iter()
        .map(|&v| {
            let v = v as f64;
            let out = if gamma == 1.0 {
                g * v
            } else if v == 0.0 {
                0.0
            } else if v > 0.0 {
                g * v.powf(gamma)
            } else {
                -g * (-v).powf(gamma)
            };
            out as f32
        })
        .collect();
    Volume3::new(shape, voxels).expect("shape preserved")
}

/// Elastic deformation: upsample the control grid to a dense field with
/// cubic B-splines, then pull each voxel from p + d(p).
pub fn apply_elastic(vol: &Volume3, grid: &ControlGrid) -> Result<Volume3> {
    let field = bspline_upsample(grid, vol.shape())?;
    warp_displacement(vol, &field)
}

/// Execute previously drawn parameters. Chains apply in list order.
pub fn apply_drawn(vol: &Volume3, params: &DrawnParams) -> Result<Volume3> {
    match params {
        DrawnParams::NoAugment => Ok(vol.clone()),
        DrawnParams::Flip { flip } => Ok(apply_flip(vol, *flip)),
        DrawnParams::Rotate { ax, ay, az } => apply_rotation(vol, (*ax, *ay, *az)),
        DrawnParams::Scale { sx, sy, sz } => apply_scale(vol, (*sx, *sy, *sz)),
        DrawnParams::Brightness { g, gamma } => Ok(apply_brightness(vol, *g, *gamma)),
        DrawnParams::Elastic { grid } => apply_elastic(vol, grid),
        DrawnParams::Compose { parts } => {
            let mut cur = vol.clone();
            for p in parts {
                cur = apply_drawn(&cur, p)?;
            }
            Ok(cur)
        }
    }
}

/// Draw parameters for `spec` from `rng` and apply them to `vol`.
pub fn apply_pipeline(vol: &Volume3, spec: &AugmentSpec, rng: &mut RngStream) -> Result<Volume3> {
    let params = draw(spec, rng)?;
    apply_drawn(vol, &params)
}
