//! Re-identification feature path: box crops from scene images and a small
//! convolutional encoder producing unit-norm embeddings.
//!
//! Nothing here looks at detector scores or regression targets. Training
//! crops come from ground-truth boxes; evaluation crops come from whatever
//! boxes the caller supplies.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ema::{DualEncoderState, ParameterVector};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Embedding};
use crate::rng;
use crate::{IdentityId, SceneId};

/// Axis-aligned box in continuous pixel coordinates; pixel `(x, y)` covers
/// `[x, x+1) x [y, y+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    /// Clips to `[0, width] x [0, height]`.
    pub fn clip(&self, width: usize, height: usize) -> BBox {
        let (w, h) = (width as f64, height as f64);
        BBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }
}

/// Row-major `height x width x channels` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                expected: height * width * channels,
                found: data.len(),
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }
}

/// Encoder input: a `height x width x channels` crop in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub identity: Option<IdentityId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    pub id: SceneId,
    pub pixels: Image,
    pub annotations: Vec<Annotation>,
}

impl SceneImage {
    pub fn box_of(&self, identity: IdentityId) -> Option<BBox> {
        self.annotations
            .iter()
            .find(|a| a.identity == Some(identity))
            .map(|a| a.bbox)
    }
}

/// Bilinear resample of `region` (in source pixel coordinates) from a
/// `src_h x src_w x channels` source to `out_h x out_w`. Sample centers sit
/// at half-pixel offsets and out-of-range taps clamp to the border.
pub(crate) fn bilinear_resample(
    sample: impl Fn(usize, usize, usize) -> f64,
    (src_h, src_w, channels): (usize, usize, usize),
    region: &BBox,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    let sy = region.height() / out_h as f64;
    let sx = region.width() / out_w as f64;
    let taps = |pos: f64, len: usize| {
        let pos = pos.clamp(0.0, (len - 1) as f64);
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    for i in 0..out_h {
        let (y0, y1, ty) = taps(region.y1 + (i as f64 + 0.5) * sy - 0.5, src_h);
        for j in 0..out_w {
            let (x0, x1, tx) = taps(region.x1 + (j as f64 + 0.5) * sx - 0.5, src_w);
            for c in 0..channels {
                let top = (1.0 - tx) * sample(y0, x0, c) + tx * sample(y0, x1, c);
                let bottom = (1.0 - tx) * sample(y1, x0, c) + tx * sample(y1, x1, c);
                out.push((1.0 - ty) * top + ty * bottom);
            }
        }
    }
    out
}

/// Crops `bbox` (clipped to the image) and resizes it to `out_h x out_w`.
pub fn roi_extract(image: &Image, bbox: &BBox, out_h: usize, out_w: usize) -> Result<Patch> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("roi size", "must be positive"));
    }
    let clipped = bbox.clip(image.width, image.height);
    if !clipped.is_valid() {
        return Err(Error::DegenerateBox);
    }
    let data = bilinear_resample(
        |y, x, c| f64::from(image.at(y, x, c)),
        (image.height, image.width, image.channels),
        &clipped,
        out_h,
        out_w,
    );
    Ok(Patch {
        height: out_h,
        width: out_w,
        channels: image.channels,
        data,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding dimension.
    pub dim: usize,
    pub roi_height: usize,
    pub roi_width: usize,
    pub channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 128,
            roi_height: 16,
            roi_width: 16,
            channels: 3,
            conv1_channels: 8,
            conv2_channels: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("dim", "must be at least 2"));
        }
        if self.roi_height == 0 || self.roi_width == 0 {
            return Err(Error::invalid("roi size", "must be positive"));
        }
        if !self.roi_height.is_multiple_of(4) || !self.roi_width.is_multiple_of(4) {
            return Err(Error::invalid("roi size", "must be divisible by 4"));
        }
        if self.channels == 0 || self.conv1_channels == 0 || self.conv2_channels == 0 {
            return Err(Error::invalid("channels", "must be positive"));
        }
        Ok(())
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Layout {
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    proj_w: usize,
    proj_b: usize,
    total: usize,
    proj_in: usize,
}

/// Intermediate activations kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    cols1: Vec<f64>,
    pre1: Vec<f64>,
    cols2: Vec<f64>,
    pre2: Vec<f64>,
    pool2: Vec<f64>,
    z_norm: f64,
    output: Vec<f64>,
}

/// `conv3x3(C -> c1) -> ReLU -> avgpool2 -> conv3x3(c1 -> c2) -> ReLU -> avgpool2
/// -> linear(-> dim) -> L2 normalize`, all convolutions zero-padded by one pixel.
///
/// Parameter order in the flat vector: conv1 weights `[c1][3][3][C]`, conv1
/// bias `[c1]`, conv2 weights `[c2][3][3][c1]`, conv2 bias `[c2]`, projection
/// weights `[dim][(H/4)*(W/4)*c2]` (input flattened row-major as y, x,
/// channel), projection bias `[dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    layout: Layout,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let conv1_w = 0;
        let conv1_b = conv1_w + c.conv1_channels * 9 * c.channels;
        let conv2_w = conv1_b + c.conv1_channels;
        let conv2_b = conv2_w + c.conv2_channels * 9 * c.conv1_channels;
        let proj_w = conv2_b + c.conv2_channels;
        let proj_in = (c.roi_height / 4) * (c.roi_width / 4) * c.conv2_channels;
        let proj_b = proj_w + c.dim * proj_in;
        let total = proj_b + c.dim;
        let layout = Layout {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            proj_w,
            proj_b,
            total,
            proj_in,
        };
        Ok(Encoder { config, layout })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// He-normal convolution weights, `1/sqrt(fan_in)` projection, zero biases.
    pub fn init_params(&self, seed: u64) -> ParameterVector {
        let mut rng = rng::stream(seed, rng::STREAM_ENCODER_INIT);
        let l = &self.layout;
        let c = &self.config;
        let mut p = vec![0.0; l.total];
        let mut fill = |range: core::ops::Range<usize>, std: f64| {
            for v in &mut p[range] {
                *v = std * rng::gaussian(&mut rng);
            }
        };
        fill(
            l.conv1_w..l.conv1_b,
            libm::sqrt(2.0 / (9 * c.channels) as f64),
        );
        fill(
            l.conv2_w..l.conv2_b,
            libm::sqrt(2.0 / (9 * c.conv1_channels) as f64),
        );
        fill(l.proj_w..l.proj_b, libm::sqrt(1.0 / l.proj_in as f64));
        ParameterVector::new(p).expect("gaussian draws are finite")
    }

    fn check_inputs(&self, params: &ParameterVector, patch: &Patch) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::LengthMismatch {
                expected: self.layout.total,
                found: params.len(),
            });
        }
        let c = &self.config;
        if patch.height != c.roi_height
            || patch.width != c.roi_width
            || patch.channels != c.channels
        {
            return Err(Error::invalid(
                "patch",
                alloc::format!(
                    "shape {}x{}x{} does not match encoder {}x{}x{}",
                    patch.height,
                    patch.width,
                    patch.channels,
                    c.roi_height,
                    c.roi_width,
                    c.channels
                ),
            ));
        }
        if patch.data.len() != patch.height * patch.width * patch.channels {
            return Err(Error::LengthMismatch {
                expected: patch.height * patch.width * patch.channels,
                found: patch.data.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, params: &ParameterVector, patch: &Patch) -> Result<Embedding> {
        self.encode_traced(params, patch).map(|(e, _)| e)
    }

    /// Encodes with the slow-moving-average parameters. No trace is kept.
    pub fn encode_with_average(
        &self,
        state: &DualEncoderState,
        patch: &Patch,
    ) -> Result<Embedding> {
        self.encode(state.average(), patch)
    }

    pub fn encode_traced(
        &self,
        params: &ParameterVector,
        patch: &Patch,
    ) -> Result<(Embedding, Trace)> {
        self.check_inputs(params, patch)?;
        let c = &self.config;
        let l = &self.layout;
        let p = params.as_slice();
        let (h, w) = (c.roi_height, c.roi_width);

        let cols1 = im2col(&patch.data, (h, w, c.channels));
        let mut pre1 = vec![0.0; h * w * c.conv1_channels];
        conv3x3(
            &cols1,
            c.channels,
            &p[l.conv1_w..l.conv1_b],
            &p[l.conv1_b..l.conv2_w],
            &mut pre1,
        );
        let pool1 = relu_avgpool2(&pre1, h, w, c.conv1_channels);

        let (h2, w2) = (h / 2, w / 2);
        let cols2 = im2col(&pool1, (h2, w2, c.conv1_channels));
        let mut pre2 = vec![0.0; h2 * w2 * c.conv2_channels];
        conv3x3(
            &cols2,
            c.conv1_channels,
            &p[l.conv2_w..l.conv2_b],
            &p[l.conv2_b..l.proj_w],
            &mut pre2,
        );
        let pool2 = relu_avgpool2(&pre2, h2, w2, c.conv2_channels);

        let weights = &p[l.proj_w..l.proj_b];
        let bias = &p[l.proj_b..l.total];
        let mut z: Vec<f64> = (0..c.dim)
            .map(|r| bias[r] + dot(&weights[r * l.proj_in..(r + 1) * l.proj_in], &pool2))
            .collect();
        let z_norm = norm(&z);
        if !(z_norm > 1e-12 && z_norm.is_finite()) {
            return Err(Error::NonFinite("encoder output"));
        }
        z.iter_mut().for_each(|v| *v /= z_norm);
        let trace = Trace {
            cols1,
            pre1,
            cols2,
            pre2,
            pool2,
            z_norm,
            output: z.clone(),
        };
        Ok((Embedding::from_vec(z), trace))
    }

    /// Accumulates `d(probe)/d(params)` into `grad_params`, where
    /// `grad_embedding = d(probe)/d(embedding)` for the traced forward pass.
    pub fn backward(
        &self,
        params: &ParameterVector,
        trace: &Trace,
        grad_embedding: &[f64],
        grad_params: &mut [f64],
    ) -> Result<()> {
        let c = &self.config;
        let l = &self.layout;
        if grad_embedding.len() != c.dim {
            return Err(Error::DimensionMismatch {
                expected: c.dim,
                found: grad_embedding.len(),
            });
        }
        if grad_params.len() != l.total || params.len() != l.total {
            return Err(Error::LengthMismatch {
                expected: l.total,
                found: grad_params.len().min(params.len()),
            });
        }
        let p = params.as_slice();
        let (h, w) = (c.roi_height, c.roi_width);
        let (h2, w2) = (h / 2, w / 2);

        // Through y = z / |z|.
        let y = &trace.output;
        let radial = dot(y, grad_embedding);
        let grad_z: Vec<f64> = grad_embedding
            .iter()
            .zip(y)
            .map(|(g, yi)| (g - yi * radial) / trace.z_norm)
            .collect();

        let mut grad_pool2 = vec![0.0; l.proj_in];
        {
            let weights = &p[l.proj_w..l.proj_b];
            let (gw, rest) = grad_params[l.proj_w..].split_at_mut(l.proj_b - l.proj_w);
            let gb = &mut rest[..c.dim];
            for (r, &gz) in grad_z.iter().enumerate() {
                gb[r] += gz;
                let row = r * l.proj_in..(r + 1) * l.proj_in;
                for ((gwi, wi), (xi, gx)) in gw[row.clone()]
                    .iter_mut()
                    .zip(&weights[row])
                    .zip(trace.pool2.iter().zip(grad_pool2.iter_mut()))
                {
                    *gwi += gz * xi;
                    *gx += gz * wi;
                }
            }
        }

        let grad_pre2 = unpool_relu(&grad_pool2, &trace.pre2, h2, w2, c.conv2_channels);
        let mut grad_pool1 = vec![0.0; h2 * w2 * c.conv1_channels];
        {
            let (gw, gb) = grad_params[l.conv2_w..l.proj_w].split_at_mut(l.conv2_b - l.conv2_w);
            conv3x3_backward(
                &trace.cols2,
                (h2, w2, c.conv1_channels),
                &p[l.conv2_w..l.conv2_b],
                c.conv2_channels,
                &grad_pre2,
                gw,
                gb,
                Some(&mut grad_pool1),
            );
        }

        let grad_pre1 = unpool_relu(&grad_pool1, &trace.pre1, h, w, c.conv1_channels);
        let (gw, gb) = grad_params[l.conv1_w..l.conv2_w].split_at_mut(l.conv1_b - l.conv1_w);
        conv3x3_backward(
            &trace.cols1,
            (h, w, c.channels),
            &p[l.conv1_w..l.conv1_b],
            c.conv1_channels,
            &grad_pre1,
            gw,
            gb,
            None,
        );
        Ok(())
    }
}

/// Zero-padded 3x3 neighbourhoods, one row per pixel, laid out `[ky][kx][c]`.
fn im2col(input: &[f64], (h, w, cin): (usize, usize, usize)) -> Vec<f64> {
    let k = 9 * cin;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * k..(y * w + x + 1) * k];
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|v| *v < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|v| *v < w) else {
                        continue;
                    };
                    let src = (iy * w + ix) * cin;
                    let dst = (ky * 3 + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    cols
}

fn conv3x3(cols: &[f64], cin: usize, weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let k = 9 * cin;
    let cout = bias.len();
    for (col, dst) in cols.chunks_exact(k).zip(out.chunks_exact_mut(cout)) {
        for ((acc, b), w) in dst.iter_mut().zip(bias).zip(weights.chunks_exact(k)) {
            *acc = b + dot(w, col);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    cols: &[f64],
    (h, w, cin): (usize, usize, usize),
    weights: &[f64],
    cout: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let k = 9 * cin;
    let mut grad_col = vec![0.0; k];
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let g = &grad_out[pix * cout..(pix + 1) * cout];
            let col = &cols[pix * k..(pix + 1) * k];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad_b[o] += go;
                axpy(go, col, &mut grad_w[o * k..(o + 1) * k]);
                if grad_in.is_some() {
                    axpy(go, &weights[o * k..(o + 1) * k], &mut grad_col);
                }
            }
            let Some(gi) = grad_in.as_deref_mut() else {
                continue;
            };
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|v| *v < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|v| *v < w) else {
                        continue;
                    };
                    let dst = (iy * w + ix) * cin;
                    let src = (ky * 3 + kx) * cin;
                    for (a, b) in gi[dst..dst + cin].iter_mut().zip(&grad_col[src..src + cin]) {
                        *a += b;
                    }
                }
            }
            grad_col.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn relu_avgpool2(pre: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * ch];
    for y in 0..h {
        for x in 0..w {
            let dst = ((y / 2) * ow + x / 2) * ch;
            let src = (y * w + x) * ch;
            for c in 0..ch {
                out[dst + c] += 0.25 * pre[src + c].max(0.0);
            }
        }
    }
    out
}

fn unpool_relu(grad_pool: &[f64], pre: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let ow = w / 2;
    let mut out = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            let src = ((y / 2) * ow + x / 2) * ch;
            let dst = (y * w + x) * ch;
            for c in 0..ch {
                if pre[dst + c] > 0.0 {
                    out[dst + c] = 0.25 * grad_pool[src + c];
                }
            }
        }
    }
    out
}
