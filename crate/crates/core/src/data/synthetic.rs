//! Parametric SAR-like ship chips: dark sea, a bright hull with class-specific
//! superstructures and wake, multiplicative gamma speckle.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{LabeledSample, Lineage, ShipClass};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::indexed_rng;

pub const GENERATOR_VERSION: &str = "ships-v1";
/// Side of generated HR chips.
pub const HR_SIZE: usize = 64;

const SEA: f64 = 0.06;
const HULL: f64 = 0.28;
const MAX_ROTATION_DEG: f64 = 25.0;
const MAX_SHIFT: f64 = 4.0;
/// Supersampling factor per axis when rasterizing templates.
const SUBSAMPLES: usize = 3;

/// Ship placement relative to the chip centre.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    /// Heading in radians, 0 along +x.
    pub angle: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Pose {
    fn random(rng: &mut impl Rng) -> Self {
        Self {
            angle: rng
                .random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG)
                .to_radians(),
            dx: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            dy: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
        }
    }
}

/// Bright deck block spanning `u0..u1` along the hull, `half_width` across.
struct Block {
    u0: f64,
    u1: f64,
    half_width: f64,
    intensity: f64,
}

struct Geometry {
    length: f64,
    width: f64,
    blocks: &'static [Block],
    /// Peak wake brightness above the sea level; 0 for none.
    wake: f64,
    wake_length: f64,
}

const fn block(u0: f64, u1: f64, half_width: f64, intensity: f64) -> Block {
    Block {
        u0,
        u1,
        half_width,
        intensity,
    }
}

/// Indexed by label.
const GEOMETRIES: [Geometry; 6] = [
    // Cargo
    Geometry {
        length: 44.0,
        width: 10.0,
        blocks: &[
            block(-17.0, -12.0, 3.5, 0.45),
            block(-4.0, 1.0, 3.5, 0.45),
            block(8.0, 13.0, 3.5, 0.45),
        ],
        wake: 0.0,
        wake_length: 0.0,
    },
    // Tanker
    Geometry {
        length: 46.0,
        width: 13.0,
        blocks: &[
            block(-22.0, -15.0, 5.5, 0.50),
            block(-13.0, 18.0, 0.8, 0.40),
        ],
        wake: 0.0,
        wake_length: 0.0,
    },
    // Fishing
    Geometry {
        length: 24.0,
        width: 6.0,
        blocks: &[block(3.0, 7.0, 2.0, 0.45)],
        wake: 0.06,
        wake_length: 14.0,
    },
    // Dredging
    Geometry {
        length: 30.0,
        width: 12.0,
        blocks: &[block(-13.0, -8.0, 6.0, 0.45), block(5.0, 10.0, 6.0, 0.45)],
        wake: 0.0,
        wake_length: 0.0,
    },
    // Passenger
    Geometry {
        length: 38.0,
        width: 10.0,
        blocks: &[block(-16.0, 12.0, 3.5, 0.40)],
        wake: 0.05,
        wake_length: 12.0,
    },
    // Tug
    Geometry {
        length: 15.0,
        width: 10.0,
        blocks: &[block(-5.0, 3.0, 4.0, 0.50)],
        wake: 0.12,
        wake_length: 20.0,
    },
];

fn geometry(class: ShipClass) -> &'static Geometry {
    &GEOMETRIES[class.label()]
}

/// Intensity at ship-local coordinates (`u` along the bow direction).
fn shade(g: &Geometry, u: f64, v: f64) -> f64 {
    let half_len = g.length / 2.0;
    let half_w = g.width / 2.0;
    let av = v.abs();
    if (-half_len..=half_len).contains(&u) {
        // pointed bow over the last hull-width of length
        let bow_start = half_len - g.width;
        let reach = if u > bow_start {
            half_w * (half_len - u) / g.width
        } else {
            half_w
        };
        if av <= reach {
            return g
                .blocks
                .iter()
                .find(|b| (b.u0..=b.u1).contains(&u) && av <= b.half_width)
                .map_or(HULL, |b| b.intensity);
        }
    }
    if g.wake > 0.0 && u < -half_len && u > -half_len - g.wake_length {
        let behind = -half_len - u;
        if av <= 1.0 + 0.2 * behind {
            return SEA + g.wake * (1.0 - behind / g.wake_length);
        }
    }
    SEA
}

/// Noise-free chip of `class` at `pose`, antialiased by supersampling.
pub fn render_template(class: ShipClass, pose: Pose, size: usize) -> Result<Image> {
    let g = geometry(class);
    let (sin, cos) = pose.angle.sin_cos();
    let centre = size as f64 / 2.0;
    let step = 1.0 / SUBSAMPLES as f64;
    let norm = (SUBSAMPLES * SUBSAMPLES) as f64;
    Image::from_fn(size, size, 1.0, |r, c| {
        let mut acc = 0.0;
        for sy in 0..SUBSAMPLES {
            for sx in 0..SUBSAMPLES {
                let x = c as f64 + (sx as f64 + 0.5) * step - centre - pose.dx;
                let y = r as f64 + (sy as f64 + 0.5) * step - centre - pose.dy;
                let u = x * cos + y * sin;
                let v = -x * sin + y * cos;
                acc += shade(g, u, v);
            }
        }
        acc / norm
    })
}

/// Multiplies every pixel by an independent Gamma(looks, 1/looks) draw
/// (unit mean) and clamps to the peak.
pub fn apply_speckle(template: &Image, looks: u32, rng: &mut impl Rng) -> Result<Image> {
    if looks == 0 {
        return Err(Error::Domain("speckle looks must be at least 1".into()));
    }
    let gamma = Gamma::new(f64::from(looks), 1.0 / f64::from(looks))
        .map_err(|e| Error::Domain(format!("speckle distribution: {e}")))?;
    let (h, w) = template.dims();
    let data = template
        .as_slice()
        .iter()
        .map(|v| v * gamma.sample(rng))
        .collect();
    Image::from_clamped(h, w, data, template.peak())
}

/// `n_per_class` speckled chips per class, labels interleaved
/// (`0, 1, .., 5, 0, 1, ..`). Sample `i` draws from its own stream of `seed`.
pub fn generate_synthetic(
    n_per_class: usize,
    seed: u64,
    speckle_looks: u32,
) -> Result<Vec<LabeledSample>> {
    if n_per_class == 0 {
        return Err(Error::Domain("n_per_class must be at least 1".into()));
    }
    if speckle_looks == 0 {
        return Err(Error::Domain("speckle_looks must be at least 1".into()));
    }
    (0..n_per_class * ShipClass::ALL.len())
        .map(|i| {
            let class = ShipClass::ALL[i % ShipClass::ALL.len()];
            let mut rng = indexed_rng(seed, i as u64);
            let template = render_template(class, Pose::random(&mut rng), HR_SIZE)?;
            let image = apply_speckle(&template, speckle_looks, &mut rng)?;
            LabeledSample::new(image, class.label(), Lineage::Hr)
        })
        .collect()
}
