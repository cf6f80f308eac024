//! Grayscale rasterization of the cart-pole for pixel descriptors.

use std::io::Write;

use super::{CartPoleParams, EnvError};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Pole length (m) that maps onto `max_pole_pixels`.
    pub max_length: f64,
    pub max_pole_pixels: f64,
    pub cart_width: usize,
    pub cart_height: usize,
    pub cart_intensity: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 32,
            height: 32,
            max_length: 4.5,
            max_pole_pixels: 24.0,
            cart_width: 8,
            cart_height: 3,
            cart_intensity: 0.5,
        }
    }
}

/// Row-major image with intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn total_intensity(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn lit_pixels(&self, threshold: f64) -> usize {
        self.pixels.iter().filter(|&&p| p > threshold).count()
    }

    /// 8-bit quantized intensities.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Binary (P5) PGM.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_bytes())
    }

    fn splat(&mut self, row: f64, col: f64, weight: f64) {
        // bilinear with pixel centres at integer + 0.5
        let (r, c) = (row - 0.5, col - 0.5);
        let (r0, c0) = (r.floor(), c.floor());
        let (fr, fc) = (r - r0, c - c0);
        for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
            for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                let (rr, cc) = (r0 + dr, c0 + dc);
                if rr < 0.0 || cc < 0.0 || rr >= self.height as f64 || cc >= self.width as f64 {
                    continue;
                }
                let idx = rr as usize * self.width + cc as usize;
                self.pixels[idx] += weight * wr * wc;
            }
        }
    }
}

/// Draws the cart (a filled rectangle near the bottom edge) and the pole as
/// an anti-aliased line whose pixel length is proportional to the pole
/// length. `state` is `[x, θ, ..]` with θ = π upright.
pub fn render_cartpole(
    params: &CartPoleParams,
    state: &[f64],
    cfg: &RenderConfig,
) -> Result<GrayImage, EnvError> {
    if !(params.pole_length > 0.0) || !params.pole_length.is_finite() {
        return Err(EnvError::InvalidParams(format!(
            "pole length must be positive to render, got {}",
            params.pole_length
        )));
    }
    if state.len() < 2 || !state[0].is_finite() || !state[1].is_finite() {
        return Err(EnvError::NonFinite);
    }
    let mut img = GrayImage::new(cfg.width, cfg.height);
    let scale = cfg.max_pole_pixels / cfg.max_length;

    let centre = cfg.width as f64 / 2.0 + state[0] * scale;
    let top = cfg.height.saturating_sub(cfg.cart_height + 1);
    let left = centre - cfg.cart_width as f64 / 2.0;
    for r in top..(top + cfg.cart_height).min(cfg.height) {
        for k in 0..cfg.cart_width {
            let c = (left + k as f64).round();
            if c >= 0.0 && (c as usize) < cfg.width {
                img.pixels[r * cfg.width + c as usize] = cfg.cart_intensity;
            }
        }
    }

    let len_px = params.pole_length * scale;
    let (sn, cs) = state[1].sin_cos();
    let (pr, pc) = (top as f64, centre);
    let samples = (len_px * 16.0).ceil().max(1.0) as usize;
    let w = len_px / samples as f64;
    for k in 0..samples {
        let t = (k as f64 + 0.5) / samples as f64 * len_px;
        img.splat(pr + t * cs, pc + t * sn, w);
    }
    for p in img.pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(img)
}
