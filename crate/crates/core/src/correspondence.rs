//! Texture correspondence: encode, match patches by cosine similarity,
//! convert best matches into a flow field and warp reference features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::degrade::bicubic_downsample;
use crate::error::{arg_err, shape_err, Result};
use crate::kernels::sample::{grid_sample_bilinear, normalize};
use crate::kernels::unfold::{unfold, PatchMatrix};
use crate::kernels::ConvGeom;
use crate::layers::{leaky_relu, Conv2d};
use crate::par;
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const ENCODER_WIDTHS: [usize; 3] = [16, 32, 64];
const ENCODER_SLOPE: f64 = 0.1;

/// Frozen, bias-free convolutional texture encoder shared by LR and Ref.
#[derive(Clone, Debug)]
pub struct TextureEncoder {
    store: ParamStore,
    convs: Vec<Conv2d>,
    seed: u64,
}

impl TextureEncoder {
    pub fn new(seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in ENCODER_WIDTHS.iter().enumerate() {
            convs.push(Conv2d::new(&mut b, &format!("tex{i}"), c_in, c, 3, ConvGeom::same(3), false)?);
            c_in = c;
        }
        Ok(TextureEncoder { store, convs, seed })
    }

    pub fn channels(&self) -> usize {
        ENCODER_WIDTHS[ENCODER_WIDTHS.len() - 1]
    }

    /// Hash identifying the encoder weights.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::hash::Fnv::new();
        h.write(&self.seed.to_le_bytes());
        for (name, p) in self.store.iter() {
            h.write(name.as_bytes());
            for v in p.value.data() {
                h.write(&(*v as f32).to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        if image.shape().c != 3 {
            return Err(shape_err("texture_encode", format!("expects 3 channels, got {}", image.shape())));
        }
        let mut x = image.clone();
        for conv in &self.convs {
            x = leaky_relu(&conv.apply(&self.store, &x)?, ENCODER_SLOPE);
        }
        Ok(x)
    }
}

/// Row-major `rows x cols` cosine similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

fn unit_rows(m: &PatchMatrix) -> Vec<f64> {
    let mut out = m.data.clone();
    for row in out.chunks_mut(m.cols) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// `M[i, j] = <Q_i / |Q_i|, K_j / |K_j|>`, zero when either patch has zero norm.
pub fn cosine_similarity_matrix(lr: &PatchMatrix, reference: &PatchMatrix) -> Result<SimilarityMatrix> {
    if lr.cols != reference.cols {
        return Err(shape_err("cosine_similarity_matrix", format!("patch length {} vs {}", lr.cols, reference.cols)));
    }
    let q = unit_rows(lr);
    let k = unit_rows(reference);
    let d = lr.cols;
    let mut values = vec![0.0; lr.rows * reference.rows];
    par::for_each_chunk(&mut values, reference.rows, |i, row| {
        let qi = &q[i * d..(i + 1) * d];
        for (j, out) in row.iter_mut().enumerate() {
            *out = qi.iter().zip(&k[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
        }
    });
    Ok(SimilarityMatrix { rows: lr.rows, cols: reference.rows, values })
}

/// Per-row argmax, first index on ties.
pub fn best_match_indices(m: &SimilarityMatrix) -> Vec<usize> {
    (0..m.rows)
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Displacement from every LR pixel to its matched reference position, in
/// LR pixels; plane 0 is x (columns), plane 1 is y (rows).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub flow: Tensor,
    pub indices: Vec<usize>,
}

impl FlowField {
    pub fn height(&self) -> usize {
        self.flow.shape().h
    }

    pub fn width(&self) -> usize {
        self.flow.shape().w
    }
}

pub fn indices_to_flow(p: &[usize], w_lr: usize, h_lr: usize, w_ref: usize, h_ref: usize) -> Result<FlowField> {
    if p.len() != w_lr * h_lr {
        return Err(shape_err("indices_to_flow", format!("{} indices for a {h_lr}x{w_lr} grid", p.len())));
    }
    if let Some((i, &bad)) = p.iter().enumerate().find(|(_, &v)| v >= w_ref * h_ref) {
        return Err(arg_err("indices_to_flow", format!("index {bad} at pixel {i} outside a {h_ref}x{w_ref} reference")));
    }
    let flow = Tensor::from_fn(Shape::new(1, 2, h_lr, w_lr), |_, c, r, col| {
        let m = p[r * w_lr + col];
        if c == 0 {
            (m % w_ref) as f64 - col as f64
        } else {
            (m / w_ref) as f64 - r as f64
        }
    });
    Ok(FlowField { flow, indices: p.to_vec() })
}

/// Normalized sampling grid at `scale` times the flow resolution. Output
/// pixel `q` samples `q + scale * flow(floor(q / scale))`, normalized against
/// the `ref_w x ref_h` tensor that will be sampled.
pub fn flow_to_grid(flow: &Tensor, scale: f64, ref_w: usize, ref_h: usize) -> Result<Tensor> {
    if scale.is_nan() || scale <= 0.0 || scale.fract() != 0.0 {
        return Err(arg_err("flow_to_grid", format!("scale must be a positive integer, got {scale}")));
    }
    let fs = flow.shape();
    if fs.c != 2 {
        return Err(shape_err("flow_to_grid", format!("flow must have 2 channels, got {fs}")));
    }
    let s = scale as usize;
    Ok(Tensor::from_fn(Shape::new(fs.n, 2, fs.h * s, fs.w * s), |n, c, y, x| {
        let d = flow.at(n, c, y / s, x / s) * scale;
        if c == 0 {
            normalize(x as f64 + d, ref_w)
        } else {
            normalize(y as f64 + d, ref_h)
        }
    }))
}

/// Sample reference features at the matched positions; output is `scale`
/// times the flow resolution.
pub fn warp_reference(features: &Tensor, flow: &Tensor, scale: f64) -> Result<Tensor> {
    let fs = features.shape();
    let grid = flow_to_grid(flow, scale, fs.w, fs.h)?;
    grid_sample_bilinear(features, &grid)
}

/// Match single-sample LR features against reference features with
/// `k x k` patches (stride 1, padding `k / 2`).
pub fn match_features(lr: &Tensor, reference: &Tensor, k: usize) -> Result<FlowField> {
    let (ls, rs) = (lr.shape(), reference.shape());
    if ls.n != 1 || rs.n != 1 || ls.c != rs.c {
        return Err(shape_err("match_features", format!("lr {ls} vs ref {rs}")));
    }
    if k.is_multiple_of(2) {
        return Err(arg_err("match_features", format!("patch size must be odd, got {k}")));
    }
    let q = unfold(lr, k, 1, k / 2)?;
    let r = unfold(reference, k, 1, k / 2)?;
    let m = cosine_similarity_matrix(&q, &r)?;
    indices_to_flow(&best_match_indices(&m), ls.w, ls.h, rs.w, rs.h)
}

fn zero_pad_to(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, xx| if y < s.h && xx < s.w { x.at(n, c, y, xx) } else { 0.0 })
}

fn crop(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, xx| x.at(n, c, y, xx))
}

/// Full matching path for one LR/Ref image pair: the reference is reduced by
/// `factor`, the LR is zero-padded to that size, both are encoded and matched.
pub fn match_images(encoder: &TextureEncoder, lr: &Tensor, reference: &Tensor, factor: usize, k: usize) -> Result<FlowField> {
    let small = bicubic_downsample(reference, factor)?;
    let (ls, ss) = (lr.shape(), small.shape());
    if ls.h > ss.h || ls.w > ss.w {
        return Err(shape_err("match_images", format!("reference {} too small for LR {ls} at factor {factor}", reference.shape())));
    }
    let lr_feat = crop(&encoder.encode(&zero_pad_to(lr, ss.h, ss.w))?, ls.h, ls.w);
    let ref_feat = encoder.encode(&small)?;
    match_features(&lr_feat, &ref_feat, k)
}
