//! Random rotation, horizontal flip, shift and zoom applied jointly to an
//! image and its mask.

use rand::Rng as _;

use super::{Image, ValueRange};
use crate::error::{Error, Result};
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentProfile {
    /// Rotation magnitude bounds in degrees; the sign is drawn separately.
    pub rotation_deg: (f64, f64),
    pub hflip: bool,
    pub shift_frac: f64,
    pub zoom_frac: f64,
}

impl AugmentProfile {
    pub fn none() -> Self {
        Self {
            rotation_deg: (0.0, 0.0),
            hflip: false,
            shift_frac: 0.0,
            zoom_frac: 0.0,
        }
    }

    /// Heavy profile used for segmentation.
    pub fn segmentation() -> Self {
        Self {
            rotation_deg: (0.0, 180.0),
            hflip: true,
            shift_frac: 0.10,
            zoom_frac: 0.20,
        }
    }

    /// Light profile: small rotations and shifts only.
    pub fn light() -> Self {
        Self {
            rotation_deg: (0.0, 5.0),
            hflip: false,
            shift_frac: 0.05,
            zoom_frac: 0.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::none()),
            "segmentation" => Some(Self::segmentation()),
            "light" => Some(Self::light()),
            _ => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == (0.0, 0.0) && !self.hflip && self.shift_frac == 0.0 && self.zoom_frac == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rotation_deg;
        if !(0.0..=180.0).contains(&lo) || !(0.0..=180.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidArgument(format!("rotation bounds {lo}..{hi} outside [0, 180]")));
        }
        if !(0.0..=0.5).contains(&self.shift_frac) || !(0.0..=0.5).contains(&self.zoom_frac) {
            return Err(Error::InvalidArgument("shift and zoom fractions must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// One sampled geometric transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub flip: bool,
    pub dx: f64,
    pub dy: f64,
    pub zoom: f64,
}

impl Transform {
    pub const IDENTITY: Self = Self {
        angle_deg: 0.0,
        flip: false,
        dx: 0.0,
        dy: 0.0,
        zoom: 1.0,
    };

    /// Output position -> source position.
    fn source(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (mut px, mut py) = ((x - cx - self.dx) / self.zoom, (y - cy - self.dy) / self.zoom);
        let (s, c) = (-self.angle_deg.to_radians()).sin_cos();
        (px, py) = (c * px - s * py, s * px + c * py);
        if self.flip {
            px = -px;
        }
        (px + cx, py + cy)
    }

    pub fn apply(&self, img: &Image, fill: f32, nearest: bool) -> Image {
        if *self == Self::IDENTITY {
            return img.clone();
        }
        let (cx, cy) = ((img.w as f64 - 1.0) / 2.0, (img.h as f64 - 1.0) / 2.0);
        let sample = |yy: isize, xx: isize| -> f64 {
            if yy < 0 || xx < 0 || yy >= img.h as isize || xx >= img.w as isize {
                fill as f64
            } else {
                img.at(yy as usize, xx as usize) as f64
            }
        };
        let mut data = Vec::with_capacity(img.data.len());
        for y in 0..img.h {
            for x in 0..img.w {
                let (sx, sy) = self.source(x as f64, y as f64, cx, cy);
                let v = if nearest {
                    sample(sy.round() as isize, sx.round() as isize)
                } else {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
                    let bot = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
                    top * (1.0 - fy) + bot * fy
                };
                data.push(v as f32);
            }
        }
        Image {
            h: img.h,
            w: img.w,
            data,
        }
    }
}

pub fn sample_transform(p: &AugmentProfile, h: usize, w: usize, rng: &mut Rng) -> Transform {
    let (lo, hi) = p.rotation_deg;
    let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let angle_deg = if mag != 0.0 && rng.random_bool(0.5) { -mag } else { mag };
    let flip = p.hflip && rng.random_bool(0.5);
    let shift = |n: usize, rng: &mut Rng| {
        if p.shift_frac > 0.0 {
            rng.random_range(-p.shift_frac..=p.shift_frac) * n as f64
        } else {
            0.0
        }
    };
    let dx = shift(w, rng);
    let dy = shift(h, rng);
    let zoom = if p.zoom_frac > 0.0 {
        rng.random_range(1.0 - p.zoom_frac..=1.0 + p.zoom_frac)
    } else {
        1.0
    };
    Transform {
        angle_deg,
        flip,
        dx,
        dy,
        zoom,
    }
}

/// Applies one sampled transform to the image (bilinear) and the mask
/// (nearest, then re-binarized). Out-of-frame pixels take the range
/// minimum.
pub fn augment(
    img: &Image,
    mask: Option<&Image>,
    profile: &AugmentProfile,
    range: ValueRange,
    rng: &mut Rng,
) -> (Image, Option<Image>) {
    let t = sample_transform(profile, img.h, img.w, rng);
    let (lo, hi) = range.bounds();
    let mut out = t.apply(img, range.min(), false);
    out.data.iter_mut().for_each(|v| *v = v.clamp(lo as f32, hi as f32));
    let m = mask.map(|m| super::binarize(&t.apply(m, 0.0, true)));
    (out, m)
}
