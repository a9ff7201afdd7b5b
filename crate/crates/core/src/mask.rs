//! Free-form corruption masks: random-walk brush strokes plus stamped squares.
//!
//! Stroke `i` draws all of its attributes from ChaCha stream `i` of the seed,
//! in this order: start row, start column, vertex count, then per segment the
//! turning angle, the length and the brush width. Square family `j` uses
//! stream `2^32 + j` for its count and then row/column per square. Raising the
//! stroke count therefore only adds strokes, never changes existing ones.
//!
//! Segments end at points clipped to the image and are rasterized as capsules
//! (every pixel centre within half the brush width of the segment), the
//! continuous form of stamping discs along the path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::BinaryMask;

const RECT_STREAM_BASE: u64 = 1 << 32;

/// `count` squares of `side × side` pixels with `count` uniform in `lo..=hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RectSpec {
    pub side: usize,
    pub lo: usize,
    pub hi: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskParams {
    pub parts: usize,
    pub max_vertices: usize,
    pub max_length: usize,
    pub max_brush_width: usize,
    /// Degrees.
    pub max_angle: f64,
    pub rects: Vec<RectSpec>,
}

impl MaskParams {
    /// Patch-scale training masks.
    pub fn patch() -> Self {
        Self {
            parts: 20,
            max_vertices: 20,
            max_length: 20,
            max_brush_width: 24,
            max_angle: 360.0,
            rects: vec![
                RectSpec { side: 100, lo: 0, hi: 5 },
                RectSpec { side: 50, lo: 0, hi: 10 },
            ],
        }
    }

    /// Whole-document evaluation masks, drawn at 4096².
    pub fn document() -> Self {
        Self {
            parts: 200,
            max_vertices: 40,
            max_length: 60,
            max_brush_width: 24,
            max_angle: 360.0,
            rects: vec![
                RectSpec { side: 128, lo: 0, hi: 50 },
                RectSpec { side: 64, lo: 0, hi: 120 },
            ],
        }
    }

    /// Draws nothing.
    pub fn empty() -> Self {
        Self {
            parts: 0,
            max_vertices: 0,
            max_length: 0,
            max_brush_width: 0,
            max_angle: 0.0,
            rects: Vec::new(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "patch" => Ok(Self::patch()),
            "document" => Ok(Self::document()),
            "empty" => Ok(Self::empty()),
            other => Err(Error::invalid(format!(
                "unknown mask preset {other:?} (expected patch, document or empty)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.max_angle.is_finite() || self.max_angle < 0.0 {
            return Err(Error::invalid("max angle must be a non-negative number of degrees"));
        }
        if let Some(r) = self.rects.iter().find(|r| r.lo > r.hi) {
            return Err(Error::invalid(format!(
                "rectangle count range [{}, {}] is empty",
                r.lo, r.hi
            )));
        }
        Ok(())
    }
}

/// `{x : lo ≤ a·x + b ≤ hi}` as a closed interval, or `None` when empty.
fn linear_interval(a: f64, b: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if a == 0.0 {
        return (lo..=hi).contains(&b).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let (p, q) = ((lo - b) / a, (hi - b) / a);
    Some((p.min(q), p.max(q)))
}

fn intersect(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    let ((a0, a1), (b0, b1)) = (a?, b?);
    let (lo, hi) = (a0.max(b0), a1.min(b1));
    (lo <= hi).then_some((lo, hi))
}

fn hull(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    match (a, b) {
        (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
        (x, None) | (None, x) => x,
    }
}

fn disc_row(cy: f64, cx: f64, r: f64, y: f64) -> Option<(f64, f64)> {
    let dy = y - cy;
    let s = r * r - dy * dy;
    (s >= 0.0).then(|| (cx - s.sqrt(), cx + s.sqrt()))
}

/// Sets every pixel whose centre lies within `r` of segment `a → b`.
fn draw_capsule(data: &mut [u8], h: usize, w: usize, a: (f64, f64), b: (f64, f64), r: f64) {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let len = len2.sqrt();
    let y_lo = ((a.0.min(b.0) - r).ceil().max(0.0)) as usize;
    let y_hi = (a.0.max(b.0) + r).floor().min(h as f64 - 1.0);
    if y_hi < 0.0 {
        return;
    }
    for y in y_lo..=y_hi as usize {
        let yf = y as f64;
        let mut span = hull(disc_row(a.0, a.1, r, yf), disc_row(b.0, b.1, r, yf));
        if len > 0.0 {
            let oy = yf - a.0;
            // 0 ≤ (p - a)·d ≤ |d|² and |(p - a)·n| ≤ r with n = (dx, -dy) / |d|
            let along = linear_interval(dx, oy * dy - a.1 * dx, 0.0, len2);
            let across = linear_interval(-dy / len, (oy * dx + a.1 * dy) / len, -r, r);
            span = hull(span, intersect(along, across));
        }
        let Some((lo, hi)) = span else { continue };
        let x_lo = lo.ceil().max(0.0);
        let x_hi = hi.floor().min(w as f64 - 1.0);
        if x_lo > x_hi {
            continue;
        }
        data[y * w + x_lo as usize..=y * w + x_hi as usize].fill(1);
    }
}

fn draw_stroke(data: &mut [u8], h: usize, w: usize, p: &MaskParams, rng: &mut ChaCha8Rng) {
    let mut y = rng.gen_range(0..h) as f64;
    let mut x = rng.gen_range(0..w) as f64;
    let vertices = rng.gen_range(1..=p.max_vertices);
    for _ in 0..vertices {
        let angle = if p.max_angle > 0.0 {
            rng.gen_range(0.0..p.max_angle).to_radians()
        } else {
            0.0
        };
        let length = rng.gen_range(1..=p.max_length) as f64;
        let width = rng.gen_range(1..=p.max_brush_width) as f64;
        let ny = (y + length * angle.sin()).clamp(0.0, h as f64 - 1.0);
        let nx = (x + length * angle.cos()).clamp(0.0, w as f64 - 1.0);
        draw_capsule(data, h, w, (y, x), (ny, nx), width / 2.0);
        y = ny;
        x = nx;
    }
}

fn draw_rects(data: &mut [u8], h: usize, w: usize, spec: &RectSpec, rng: &mut ChaCha8Rng) {
    let count = rng.gen_range(spec.lo..=spec.hi);
    if spec.side == 0 {
        return;
    }
    for _ in 0..count {
        let y0 = rng.gen_range(0..=h.saturating_sub(spec.side));
        let x0 = rng.gen_range(0..=w.saturating_sub(spec.side));
        for y in y0..(y0 + spec.side).min(h) {
            data[y * w + x0..y * w + (x0 + spec.side).min(w)].fill(1);
        }
    }
}

/// Draws a mask of `h × w` pixels. Deterministic in `(params, seed)`.
pub fn freeform_mask(h: usize, w: usize, params: &MaskParams, seed: u64) -> Result<BinaryMask> {
    params.validate()?;
    let mut data = vec![0u8; h * w];
    let mask_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    };
    if h > 0 && w > 0 && params.max_vertices > 0 && params.max_length > 0 && params.max_brush_width > 0 {
        for i in 0..params.parts {
            draw_stroke(&mut data, h, w, params, &mut mask_rng(i as u64));
        }
    }
    for (j, spec) in params.rects.iter().enumerate() {
        if h > 0 && w > 0 {
            draw_rects(&mut data, h, w, spec, &mut mask_rng(RECT_STREAM_BASE + j as u64));
        }
    }
    BinaryMask::new(h, w, data)
}

/// Pixel-wise OR.
pub fn combine_or(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::invalid(format!(
            "cannot combine {}x{} and {}x{} masks",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x | y).collect();
    BinaryMask::new(a.height(), a.width(), data)
}
