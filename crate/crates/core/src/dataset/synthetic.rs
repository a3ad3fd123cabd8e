use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Patch;
use crate::error::{Error, Result};

/// Target class statistics: the pixel share of every label value and, for
/// each foreground class, the probability that a patch contains it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    /// `C + 1` pixel fractions, background first.
    pub fractions: Vec<f64>,
    /// `C` patch-presence probabilities for classes `1..=C`.
    pub presence: Vec<f64>,
}

impl ImbalanceProfile {
    /// Rooftop damage statistics: background, no damage, minor damage,
    /// major damage, destroyed.
    pub fn rooftop_damage() -> Self {
        Self {
            fractions: vec![0.9636, 0.0278, 0.0033, 0.0034, 0.0019],
            presence: vec![0.364, 0.123, 0.119, 0.112],
        }
    }

    /// A profile without any foreground.
    pub fn background_only(classes: usize) -> Self {
        let mut fractions = vec![0.0; classes + 1];
        fractions[0] = 1.0;
        Self {
            fractions,
            presence: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.presence.len()
    }

    pub fn validate(&self, patch_size: usize) -> Result<()> {
        let c = self.classes();
        if self.fractions.len() != c + 1 {
            return Err(Error::Dataset(format!(
                "profile has {} fractions for {c} classes, expected {}",
                self.fractions.len(),
                c + 1
            )));
        }
        if self.fractions.iter().chain(&self.presence).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Dataset("profile values must be finite and non-negative".into()));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Dataset(format!("pixel fractions sum to {sum}, expected 1")));
        }
        let area = (patch_size * patch_size) as f64;
        let mut crowd = 0.0;
        for class in 1..=c {
            let f = self.fractions[class];
            let p = self.presence[class - 1];
            if p > 1.0 {
                return Err(Error::Dataset(format!("class {class}: presence {p} exceeds 1")));
            }
            match (f > 0.0, p > 0.0) {
                (false, false) => continue,
                (true, false) => {
                    return Err(Error::Dataset(format!(
                        "class {class}: pixel fraction {f} but presence 0"
                    )))
                }
                (false, true) => {
                    return Err(Error::Dataset(format!(
                        "class {class}: presence {p} but pixel fraction 0"
                    )))
                }
                (true, true) => {}
            }
            let per_patch = f * area / p;
            if per_patch < 4.0 {
                return Err(Error::Dataset(format!(
                    "class {class}: {per_patch:.2} pixels per patch is too small to draw"
                )));
            }
            crowd += per_patch;
        }
        if crowd > area / 2.0 {
            return Err(Error::Dataset(format!(
                "foreground needs {crowd:.0} pixels in a {patch_size}x{patch_size} patch"
            )));
        }
        Ok(())
    }

    fn mean_area(&self, class: usize, patch_size: usize) -> f64 {
        let p = self.presence[class - 1];
        if p == 0.0 {
            0.0
        } else {
            self.fractions[class] * (patch_size * patch_size) as f64 / p
        }
    }
}

/// Appearance knobs for the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStyle {
    /// Standard deviation of the per-pixel additive noise.
    pub noise_sigma: f32,
    /// Color offset from the first to the last foreground class; classes in
    /// between are spaced evenly along it.
    pub damage_shift: [f32; 3],
    /// Half-width of the uniform per-building brightness variation.
    pub roof_jitter: f32,
}

impl Default for SyntheticStyle {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            damage_shift: [0.2, -0.06, -0.18],
            roof_jitter: 0.08,
        }
    }
}

impl SyntheticStyle {
    fn class_offset(&self, class: usize, classes: usize) -> [f32; 3] {
        let t = if classes <= 1 {
            0.0
        } else {
            (class - 1) as f32 / (classes - 1) as f32
        };
        self.damage_shift.map(|d| d * t)
    }
}

/// Generated patches together with the pixel counts recorded while drawing.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub patches: Vec<Patch>,
    pub pixel_counts: Vec<u64>,
}

impl GeneratedData {
    pub fn fractions(&self) -> Vec<f64> {
        let total: u64 = self.pixel_counts.iter().sum();
        self.pixel_counts
            .iter()
            .map(|&n| if total == 0 { 0.0 } else { n as f64 / total as f64 })
            .collect()
    }
}

/// Pixel count per label value `0..=classes` over `patches`.
pub fn pixel_counts(patches: &[Patch], classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; classes + 1];
    for p in patches {
        for (slot, n) in counts.iter_mut().zip(p.histogram(classes)) {
            *slot += n;
        }
    }
    counts
}

#[derive(Clone, Copy)]
struct Rect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn overlaps_with_margin(&self, o: &Rect) -> bool {
        self.y < o.y + o.h + 1 && o.y < self.y + self.h + 1 && self.x < o.x + o.w + 1 && o.x < self.x + self.w + 1
    }
}

/// Draws `count` patches with ids `0..count`: rooftop shapes on a textured
/// ground, colored by class, with per-pixel Gaussian noise.
pub fn generate_synthetic(
    profile: &ImbalanceProfile,
    style: &SyntheticStyle,
    count: usize,
    patch_size: usize,
    seed: u64,
) -> Result<GeneratedData> {
    if count == 0 {
        return Err(Error::Dataset("count must be >= 1".into()));
    }
    if patch_size < 8 || !patch_size.is_power_of_two() {
        return Err(Error::Dataset(format!(
            "patch size must be a power of two >= 8, got {patch_size}"
        )));
    }
    if !(style.noise_sigma >= 0.0 && style.noise_sigma.is_finite()) {
        return Err(Error::Dataset("noise sigma must be finite and >= 0".into()));
    }
    profile.validate(patch_size)?;
    let classes = profile.classes();
    let mut patches = Vec::with_capacity(count);
    let mut pixel_counts = vec![0u64; classes + 1];
    for id in 0..count as u32 {
        let (patch, counts) = draw_patch(profile, style, id, patch_size, seed);
        for (a, b) in pixel_counts.iter_mut().zip(counts) {
            *a += b;
        }
        patches.push(patch);
    }
    Ok(GeneratedData {
        patches,
        pixel_counts,
    })
}

fn draw_patch(
    profile: &ImbalanceProfile,
    style: &SyntheticStyle,
    id: u32,
    s: usize,
    seed: u64,
) -> (Patch, Vec<u64>) {
    let classes = profile.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);

    // Ground: a per-patch earth tone with two oriented waves for texture.
    let ground = [
        rng.gen_range(0.25..0.45f32),
        rng.gen_range(0.35..0.55f32),
        rng.gen_range(0.2..0.35f32),
    ];
    let waves: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f32::consts::PI);
            let freq = rng.gen_range(0.1..0.4f32);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let amp = rng.gen_range(0.02..0.06f32);
            (angle.cos() * freq, angle.sin() * freq, phase, amp)
        })
        .collect();
    let mut image = vec![0.0f32; s * s * 3];
    for y in 0..s {
        for x in 0..s {
            let t: f32 = waves
                .iter()
                .map(|&(fy, fx, ph, a)| a * (fy * y as f32 + fx * x as f32 + ph).sin())
                .sum();
            let o = 3 * (y * s + x);
            for ch in 0..3 {
                image[o + ch] = ground[ch] + t;
            }
        }
    }

    let mut labels = vec![0u8; s * s];
    let mut counts = vec![0u64; classes + 1];
    let mut placed: Vec<Rect> = Vec::new();
    let max_side = s / 2;
    for class in 1..=classes {
        let p = profile.presence[class - 1];
        if p == 0.0 || rng.gen::<f64>() >= p {
            continue;
        }
        let shapes = rng.gen_range(1..=2usize);
        let mean = profile.mean_area(class, s) / shapes as f64;
        let offset = style.class_offset(class, classes);
        for _ in 0..shapes {
            let area = mean * rng.gen_range(0.75..1.25);
            let aspect = rng.gen_range(0.6..1.6);
            let ellipse = rng.gen_bool(0.5);
            let scale = if ellipse { (4.0 / std::f64::consts::PI).sqrt() } else { 1.0 };
            let w = ((area * aspect).sqrt() * scale).round().clamp(2.0, max_side as f64) as usize;
            let h = ((area / aspect).sqrt() * scale).round().clamp(2.0, max_side as f64) as usize;
            let mut spot = None;
            for _ in 0..64 {
                let r = Rect {
                    y: rng.gen_range(1..s - h),
                    x: rng.gen_range(1..s - w),
                    h,
                    w,
                };
                if placed.iter().all(|o| !o.overlaps_with_margin(&r)) {
                    spot = Some(r);
                    break;
                }
            }
            let Some(r) = spot else { continue };
            placed.push(r);
            let base = rng.gen_range(0.6 - style.roof_jitter..0.6 + style.roof_jitter);
            let color = [base + offset[0], base + offset[1], base + offset[2]];
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let (ry, rx) = (h as f64 / 2.0, w as f64 / 2.0);
            for dy in 0..h {
                for dx in 0..w {
                    if ellipse {
                        let ny = (dy as f64 - cy) / ry;
                        let nx = (dx as f64 - cx) / rx;
                        if ny * ny + nx * nx > 1.0 {
                            continue;
                        }
                    }
                    let px = (r.y + dy) * s + r.x + dx;
                    labels[px] = class as u8;
                    counts[class] += 1;
                    image[3 * px..3 * px + 3].copy_from_slice(&color);
                }
            }
        }
    }
    counts[0] = (s * s) as u64 - counts[1..].iter().sum::<u64>();

    if style.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, style.noise_sigma).expect("sigma checked above");
        for v in &mut image {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    (
        Patch {
            id,
            size: s,
            image,
            labels,
        },
        counts,
    )
}
