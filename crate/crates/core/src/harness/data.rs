//! Training pairs: procedural synthesis, reference patch shuffling and
//! geometric augmentation.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::bicubic_downsample;
use crate::error::{arg_err, shape_err, Result};
use crate::harness::io::{read_png, write_png};
use crate::network::SCALE;
use crate::tensor::{Shape, Tensor};

/// One training or evaluation example; every tensor is `(1, 3, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub hr: Tensor,
    pub lr: Tensor,
    pub reference: Tensor,
}

impl SamplePair {
    /// Derive the LR input from `hr` by bicubic downsampling.
    pub fn from_hr_ref(hr: Tensor, reference: Tensor) -> Result<Self> {
        let s = hr.shape();
        if s.n != 1 || s.c != 3 || reference.shape().c != 3 || reference.shape().n != 1 {
            return Err(shape_err("sample_pair", format!("HR {s} and Ref {} must be single RGB images", reference.shape())));
        }
        let lr = bicubic_downsample(&hr, SCALE)?;
        Ok(SamplePair { hr, lr, reference })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedPair {
    pub name: String,
    pub pair: SamplePair,
}

/// Stack pairs into `(hr, lr, ref)` batches.
pub fn stack_pairs(pairs: &[&SamplePair]) -> Result<(Tensor, Tensor, Tensor)> {
    let hr: Vec<Tensor> = pairs.iter().map(|p| p.hr.clone()).collect();
    let lr: Vec<Tensor> = pairs.iter().map(|p| p.lr.clone()).collect();
    let rf: Vec<Tensor> = pairs.iter().map(|p| p.reference.clone()).collect();
    Ok((Tensor::stack(&hr)?, Tensor::stack(&lr)?, Tensor::stack(&rf)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShuffleLevel {
    None,
    Easy,
    Medium,
    Hard,
}

impl ShuffleLevel {
    pub const ALL: [ShuffleLevel; 4] = [ShuffleLevel::None, ShuffleLevel::Easy, ShuffleLevel::Medium, ShuffleLevel::Hard];

    /// Patches per side.
    pub fn grid(self) -> usize {
        match self {
            ShuffleLevel::None => 1,
            ShuffleLevel::Easy => 2,
            ShuffleLevel::Medium => 4,
            ShuffleLevel::Hard => 8,
        }
    }
}

impl FromStr for ShuffleLevel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ShuffleLevel::None),
            "easy" => Ok(ShuffleLevel::Easy),
            "medium" => Ok(ShuffleLevel::Medium),
            "hard" => Ok(ShuffleLevel::Hard),
            _ => Err(format!("unknown shuffle level `{s}` (expected none, easy, medium or hard)")),
        }
    }
}

impl fmt::Display for ShuffleLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShuffleLevel::None => "none",
            ShuffleLevel::Easy => "easy",
            ShuffleLevel::Medium => "medium",
            ShuffleLevel::Hard => "hard",
        })
    }
}

/// Rearrange a `g x g` grid of equal patches: output patch `i` (row-major)
/// is input patch `perm[i]`.
pub fn permute_patches(image: &Tensor, g: usize, perm: &[usize]) -> Result<Tensor> {
    let s = image.shape();
    if g == 0 || !s.h.is_multiple_of(g) || !s.w.is_multiple_of(g) {
        return Err(shape_err("shuffle_patches", format!("{}x{} not divisible into a {g}x{g} grid", s.h, s.w)));
    }
    let mut seen = vec![false; g * g];
    if perm.len() != g * g || !perm.iter().all(|&p| p < g * g && !std::mem::replace(&mut seen[p], true)) {
        return Err(arg_err("shuffle_patches", format!("{perm:?} is not a permutation of 0..{}", g * g)));
    }
    let (ph, pw) = (s.h / g, s.w / g);
    Ok(Tensor::from_fn(s, |n, c, y, x| {
        let src = perm[(y / ph) * g + x / pw];
        image.at(n, c, (src / g) * ph + y % ph, (src % g) * pw + x % pw)
    }))
}

/// Shuffle patches with a uniformly random permutation; `None` is the identity.
pub fn shuffle_patches(image: &Tensor, level: ShuffleLevel, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let g = level.grid();
    if g == 1 {
        return Ok(image.clone());
    }
    let mut perm: Vec<usize> = (0..g * g).collect();
    perm.shuffle(rng);
    permute_patches(image, g, &perm)
}

/// Flips followed by `rot90` counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: u8,
}

impl Augment {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Augment { hflip: rng.random(), vflip: rng.random(), rot90: rng.random_range(0..4) }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let s = t.shape();
        let mut out = Tensor::from_fn(s, |n, c, y, x| {
            let sy = if self.vflip { s.h - 1 - y } else { y };
            let sx = if self.hflip { s.w - 1 - x } else { x };
            t.at(n, c, sy, sx)
        });
        for _ in 0..self.rot90 % 4 {
            let s = out.shape();
            out = Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| out.at(n, c, x, s.w - 1 - y));
        }
        out
    }

    /// Same transform on HR, LR and Ref.
    pub fn apply_pair(&self, p: &SamplePair) -> SamplePair {
        SamplePair { hr: self.apply(&p.hr), lr: self.apply(&p.lr), reference: self.apply(&p.reference) }
    }
}

#[derive(Clone, Debug)]
enum Texture {
    Grating { freq: f64, theta: f64, phase: f64, color: [f64; 3] },
    Checker { period: f64, theta: f64, color: [f64; 3] },
    Blob { cx: f64, cy: f64, sigma: f64, color: [f64; 3] },
}

impl Texture {
    fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let k = match *self {
            Texture::Grating { freq, theta, phase, .. } => 0.5 + 0.5 * (2.0 * PI * freq * (theta.cos() * x + theta.sin() * y) + phase).sin(),
            Texture::Checker { period, theta, .. } => {
                let (u, v) = (theta.cos() * x + theta.sin() * y, -theta.sin() * x + theta.cos() * y);
                (((u / period).floor() + (v / period).floor()).rem_euclid(2.0) == 0.0) as u8 as f64
            }
            Texture::Blob { cx, cy, sigma, .. } => (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp(),
        };
        let color = match self {
            Texture::Grating { color, .. } | Texture::Checker { color, .. } | Texture::Blob { color, .. } => color,
        };
        [k * color[0], k * color[1], k * color[2]]
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.2..1.0), rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)]
}

/// A seeded texture field over the plane.
#[derive(Clone, Debug)]
struct Scene {
    background: [f64; 3],
    layers: Vec<Texture>,
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let mut layers = Vec::new();
        for _ in 0..rng.random_range(1..=2) {
            layers.push(Texture::Grating {
                freq: rng.random_range(0.04..0.2),
                theta: rng.random_range(0.0..PI),
                phase: rng.random_range(0.0..2.0 * PI),
                color: random_color(rng),
            });
        }
        layers.push(Texture::Checker { period: rng.random_range(3.0..9.0), theta: rng.random_range(0.0..PI / 2.0), color: random_color(rng) });
        for _ in 0..rng.random_range(2..=4) {
            layers.push(Texture::Blob {
                cx: rng.random_range(-extent..extent),
                cy: rng.random_range(-extent..extent),
                sigma: rng.random_range(3.0..extent / 3.0),
                color: random_color(rng),
            });
        }
        Scene { background: [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)], layers }
    }

    /// Render `size x size` pixels with the top-left corner at `(x0, y0)`,
    /// quantized to 8 bits.
    fn render(&self, x0: f64, y0: f64, size: usize) -> Tensor {
        let weight = 1.0 / self.layers.len() as f64;
        let pixels: Vec<[f64; 3]> = (0..size * size)
            .map(|i| {
                let (x, y) = (x0 + (i % size) as f64, y0 + (i / size) as f64);
                let mut rgb = self.background;
                for l in &self.layers {
                    let v = l.eval(x, y);
                    for c in 0..3 {
                        rgb[c] += weight * 1.4 * v[c];
                    }
                }
                rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            })
            .collect();
        Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| pixels[y * size + x][c])
    }
}

/// `count` procedural pairs with `hr_size x hr_size` HR images. The Ref is a
/// flipped/rotated window of the same texture field, shifted by up to a
/// quarter of the image, so it overlaps the HR content by construction.
pub fn synthetic_pairs(count: usize, hr_size: usize, seed: u64) -> Result<Vec<SamplePair>> {
    if hr_size == 0 || !hr_size.is_multiple_of(SCALE * 8) {
        return Err(arg_err("synthetic_pairs", format!("HR size {hr_size} must be a positive multiple of {}", SCALE * 8)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = hr_size as f64;
    (0..count)
        .map(|_| {
            let scene = Scene::random(&mut rng, extent);
            let (x0, y0) = (rng.random_range(-extent / 2.0..0.0).round(), rng.random_range(-extent / 2.0..0.0).round());
            let q = (hr_size / 4) as i64;
            let (dx, dy) = (rng.random_range(-q..=q) as f64, rng.random_range(-q..=q) as f64);
            let t = Augment::random(&mut rng);
            let hr = scene.render(x0, y0, hr_size);
            let reference = t.apply(&scene.render(x0 + dx, y0 + dy, hr_size));
            SamplePair::from_hr_ref(hr, reference)
        })
        .collect()
}

/// Pairs stored as `<name>_hr.png` / `<name>_ref.png`, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<NamedPair>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let file = entry?.file_name();
        if let Some(stem) = file.to_str().and_then(|f| f.strip_suffix("_hr.png")) {
            names.push(stem.to_string());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(arg_err("load_dir", format!("no *_hr.png files in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|name| {
            let hr = read_png(&dir.join(format!("{name}_hr.png")))?;
            let reference = read_png(&dir.join(format!("{name}_ref.png")))?;
            Ok(NamedPair { pair: SamplePair::from_hr_ref(hr, reference)?, name })
        })
        .collect()
}

pub fn save_dir(dir: &Path, pairs: &[NamedPair]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for p in pairs {
        write_png(&dir.join(format!("{}_hr.png", p.name)), &p.pair.hr)?;
        write_png(&dir.join(format!("{}_lr.png", p.name)), &p.pair.lr)?;
        write_png(&dir.join(format!("{}_ref.png", p.name)), &p.pair.reference)?;
    }
    Ok(())
}
