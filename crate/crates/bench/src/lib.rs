//! Synthetic inputs shared by the benchmarks.

use pyradoc::{ImageTensor, Result};

/// Deterministic page-like image: light paper with rows of dark glyph blocks.
pub fn synthetic_document(h: usize, w: usize) -> Result<ImageTensor> {
    ImageTensor::from_fn(3, h, w, |c, y, x| {
        let line = (y / 12) % 3 == 1;
        let glyph = (x / 7 + y / 12) % 6 != 0 && (x % 7) < 5;
        if line && glyph {
            0.1 + 0.02 * c as f32
        } else {
            0.92 - 0.01 * c as f32
        }
    })
}

/// Smooth pseudo-random field in `[-1, 1]`, cheap to generate at any size.
pub fn synthetic_noise(channels: usize, h: usize, w: usize) -> Result<ImageTensor> {
    ImageTensor::from_fn(channels, h, w, |c, y, x| {
        let v = (x as f32 * 0.173 + y as f32 * 0.311 + c as f32 * 1.7).sin();
        v * (x as f32 * 0.05 - y as f32 * 0.07).cos()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_have_requested_shape_and_range() {
        let doc = synthetic_document(40, 50).unwrap();
        assert_eq!((doc.channels(), doc.dims()), (3, (40, 50)));
        assert!(doc.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let noise = synthetic_noise(1, 9, 11).unwrap();
        assert!(noise.data().iter().all(|v| v.abs() <= 1.0));
    }
}
