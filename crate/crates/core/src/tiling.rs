//! Overlapping patch grids: planning, extraction and overlap-average merge.
//!
//! A grid is laid out on the image reflect-padded at the bottom and right to
//! the next size where `(dim - patch)` is a multiple of the stride, so the
//! closed-form patch count holds and every pixel is covered. Merging averages
//! all patch contributions per pixel and crops back to the original size.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    orig_h: usize,
    orig_w: usize,
    image_h: usize,
    image_w: usize,
    patch_h: usize,
    patch_w: usize,
    stride_y: usize,
    stride_x: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    origins: Vec<(usize, usize)>,
}

fn padded_len(len: usize, patch: usize, stride: usize) -> usize {
    if len <= patch {
        patch
    } else {
        patch + (len - patch).div_ceil(stride) * stride
    }
}

/// Plans a grid of `patch_h × patch_w` windows over an `h × w` image.
pub fn plan_grid(
    h: usize,
    w: usize,
    patch_h: usize,
    patch_w: usize,
    stride_y: usize,
    stride_x: usize,
) -> Result<PatchGrid> {
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("image dims must be positive, got {h}x{w}")));
    }
    if patch_h == 0 || patch_w == 0 || stride_y == 0 || stride_x == 0 {
        return Err(Error::invalid("patch and stride dims must be positive"));
    }
    if stride_y > patch_h || stride_x > patch_w {
        return Err(Error::invalid(format!(
            "stride {stride_y}x{stride_x} exceeds patch {patch_h}x{patch_w}; the grid would leave gaps"
        )));
    }
    let image_h = padded_len(h, patch_h, stride_y);
    let image_w = padded_len(w, patch_w, stride_x);
    let rows: Vec<usize> = (0..=(image_h - patch_h) / stride_y).map(|i| i * stride_y).collect();
    let cols: Vec<usize> = (0..=(image_w - patch_w) / stride_x).map(|i| i * stride_x).collect();
    let origins = rows
        .iter()
        .flat_map(|&y| cols.iter().map(move |&x| (y, x)))
        .collect();
    Ok(PatchGrid {
        orig_h: h,
        orig_w: w,
        image_h,
        image_w,
        patch_h,
        patch_w,
        stride_y,
        stride_x,
        rows,
        cols,
        origins,
    })
}

impl PatchGrid {
    /// Unpadded `(height, width)`.
    pub fn orig_dims(&self) -> (usize, usize) {
        (self.orig_h, self.orig_w)
    }

    /// Padded `(height, width)` the grid is laid out on.
    pub fn padded_dims(&self) -> (usize, usize) {
        (self.image_h, self.image_w)
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        (self.patch_h, self.patch_w)
    }

    pub fn strides(&self) -> (usize, usize) {
        (self.stride_y, self.stride_x)
    }

    pub fn pad_bottom(&self) -> usize {
        self.image_h - self.orig_h
    }

    pub fn pad_right(&self) -> usize {
        self.image_w - self.orig_w
    }

    /// Top-left corners, row-major.
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// `(rows, cols)` of the grid.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    /// Number of patches covering each padded row and each padded column.
    /// The overlap count of pixel `(y, x)` is their product.
    pub fn coverage(&self) -> (Vec<u32>, Vec<u32>) {
        (
            axis_coverage(&self.rows, self.patch_h, self.image_h),
            axis_coverage(&self.cols, self.patch_w, self.image_w),
        )
    }
}

fn axis_coverage(starts: &[usize], patch: usize, len: usize) -> Vec<u32> {
    let mut count = vec![0u32; len];
    for &s in starts {
        for c in &mut count[s..s + patch] {
            *c += 1;
        }
    }
    count
}

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`-1 → 1`, `n → n - 2`), folding as often as needed.
#[inline]
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

fn check_orig(img: &ImageTensor, grid: &PatchGrid) -> Result<()> {
    if img.dims() != grid.orig_dims() {
        return Err(Error::invalid(format!(
            "image is {}x{} but grid was planned for {}x{}",
            img.height(),
            img.width(),
            grid.orig_h,
            grid.orig_w
        )));
    }
    Ok(())
}

/// Copies the patch at `index` out of the (virtually) reflect-padded image.
pub fn extract_patch(img: &ImageTensor, grid: &PatchGrid, index: usize) -> Result<ImageTensor> {
    check_orig(img, grid)?;
    let &(y0, x0) = grid
        .origins
        .get(index)
        .ok_or_else(|| Error::invalid(format!("patch index {index} out of range ({})", grid.len())))?;
    let (ph, pw) = grid.patch_dims();
    let (h, w) = img.dims();
    let channels = img.channels();
    let mut data = Vec::with_capacity(channels * ph * pw);
    let inside_x = x0 + pw <= w;
    let col_index: Vec<usize> = if inside_x {
        Vec::new()
    } else {
        (x0..x0 + pw).map(|x| reflect_index(x, w)).collect()
    };
    for c in 0..channels {
        let plane = img.plane(c);
        for y in y0..y0 + ph {
            let row = &plane[reflect_index(y, h) * w..][..w];
            if inside_x {
                data.extend_from_slice(&row[x0..x0 + pw]);
            } else {
                data.extend(col_index.iter().map(|&x| row[x]));
            }
        }
    }
    Ok(ImageTensor::from_raw(channels, ph, pw, data))
}

/// Shifted crop sampling: one owning patch per origin, in origin order.
pub fn split(img: &ImageTensor, grid: &PatchGrid) -> Result<Vec<ImageTensor>> {
    check_orig(img, grid)?;
    (0..grid.len()).map(|i| extract_patch(img, grid, i)).collect()
}

/// Receives finished output rows from a [`PatchMerger`]: `(channel, y, values)`
/// with `values.len()` equal to the unpadded width.
pub trait RowSink {
    fn write_row(&mut self, channel: usize, y: usize, values: &[f64]);
}

impl<F: FnMut(usize, usize, &[f64])> RowSink for F {
    fn write_row(&mut self, channel: usize, y: usize, values: &[f64]) {
        self(channel, y, values)
    }
}

/// Streaming overlap-average merge.
///
/// Patches must be pushed in origin order. Sums are kept in `f64` in a band
/// of `patch_h` padded rows; once a row can receive no further contributions
/// it is divided by its overlap count, cropped, and handed to the sink. Memory
/// is `O(channels × patch_h × padded_width)` regardless of image height.
pub struct PatchMerger<'g, S> {
    grid: &'g PatchGrid,
    channels: usize,
    band: Vec<f64>,
    row_cov: Vec<u32>,
    col_cov: Vec<u32>,
    flushed: usize,
    next: usize,
    scratch: Vec<f64>,
    sink: S,
}

impl<'g, S: RowSink> PatchMerger<'g, S> {
    pub fn new(grid: &'g PatchGrid, channels: usize, sink: S) -> Self {
        let (row_cov, col_cov) = grid.coverage();
        Self {
            grid,
            channels,
            band: vec![0.0; channels * grid.patch_h * grid.image_w],
            row_cov,
            col_cov,
            flushed: 0,
            next: 0,
            scratch: vec![0.0; grid.orig_w],
            sink,
        }
    }

    /// Index of the next patch the merger expects.
    pub fn next_index(&self) -> usize {
        self.next
    }

    pub fn push(&mut self, patch: &ImageTensor) -> Result<()> {
        let grid = self.grid;
        if self.next >= grid.len() {
            return Err(Error::invalid(format!("grid has only {} patches", grid.len())));
        }
        if patch.channels() != self.channels || patch.dims() != grid.patch_dims() {
            return Err(Error::invalid(format!(
                "patch {} is {}x{}x{}, expected {}x{}x{}",
                self.next,
                patch.channels(),
                patch.height(),
                patch.width(),
                self.channels,
                grid.patch_h,
                grid.patch_w
            )));
        }
        let (y0, x0) = grid.origins[self.next];
        self.flush_until(y0);
        let (ph, pw, iw) = (grid.patch_h, grid.patch_w, grid.image_w);
        for c in 0..self.channels {
            let src = patch.plane(c);
            for r in 0..ph {
                let slot = (y0 + r) % ph;
                let dst = &mut self.band[(c * ph + slot) * iw + x0..][..pw];
                for (d, &v) in dst.iter_mut().zip(&src[r * pw..(r + 1) * pw]) {
                    *d += v as f64;
                }
            }
        }
        self.next += 1;
        Ok(())
    }

    fn flush_until(&mut self, end: usize) {
        let grid = self.grid;
        let (ph, iw) = (grid.patch_h, grid.image_w);
        while self.flushed < end {
            let y = self.flushed;
            let slot = y % ph;
            for c in 0..self.channels {
                let row = &mut self.band[(c * ph + slot) * iw..][..iw];
                if y < grid.orig_h {
                    let rc = self.row_cov[y] as f64;
                    for (x, out) in self.scratch.iter_mut().enumerate() {
                        *out = row[x] / (rc * self.col_cov[x] as f64);
                    }
                    self.sink.write_row(c, y, &self.scratch);
                }
                row.fill(0.0);
            }
            self.flushed += 1;
        }
    }

    /// Flushes the remaining rows and returns the sink.
    pub fn finish(mut self) -> Result<S> {
        if self.next != self.grid.len() {
            return Err(Error::invalid(format!(
                "merge received {} of {} patches",
                self.next,
                self.grid.len()
            )));
        }
        self.flush_until(self.grid.image_h);
        Ok(self.sink)
    }
}

/// Writes merged rows into a full image.
pub(crate) struct ImageSink(pub ImageTensor);

impl RowSink for ImageSink {
    fn write_row(&mut self, channel: usize, y: usize, values: &[f64]) {
        let (h, w) = self.0.dims();
        let dst = &mut self.0.data_mut()[(channel * h + y) * w..][..w];
        for (d, &v) in dst.iter_mut().zip(values) {
            *d = v as f32;
        }
    }
}

/// Overlap-average merge of a full patch list.
pub fn merge(patches: &[ImageTensor], grid: &PatchGrid, channels: usize) -> Result<ImageTensor> {
    if patches.len() != grid.len() {
        return Err(Error::invalid(format!(
            "got {} patches for a grid of {}",
            patches.len(),
            grid.len()
        )));
    }
    let (h, w) = grid.orig_dims();
    let mut merger = PatchMerger::new(grid, channels, ImageSink(ImageTensor::zeros(channels, h, w)?));
    for p in patches {
        merger.push(p)?;
    }
    Ok(merger.finish()?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Every stride multiple that keeps the window inside the padded dims.
    fn enumerate_origins(grid: &PatchGrid) -> Vec<(usize, usize)> {
        let (ih, iw) = grid.padded_dims();
        let (ph, pw) = grid.patch_dims();
        let (sy, sx) = grid.strides();
        let mut out = Vec::new();
        let mut y = 0;
        while y + ph <= ih {
            let mut x = 0;
            while x + pw <= iw {
                out.push((y, x));
                x += sx;
            }
            y += sy;
        }
        out
    }

    fn closed_form_count(grid: &PatchGrid) -> usize {
        let (ih, iw) = grid.padded_dims();
        let (ph, pw) = grid.patch_dims();
        let (sy, sx) = grid.strides();
        ((ih - ph) / sy + 1) * ((iw - pw) / sx + 1)
    }

    fn pseudo_random_image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ImageTensor::from_fn(c, h, w, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32) / (1u64 << 24) as f32
        })
        .unwrap()
    }

    #[test]
    fn square_1024_has_49_origins() {
        let g = plan_grid(1024, 1024, 256, 256, 128, 128).unwrap();
        assert_eq!(g.len(), 49);
        assert_eq!((g.pad_bottom(), g.pad_right()), (0, 0));
    }

    #[test]
    fn exact_fit_has_one_origin() {
        let g = plan_grid(256, 256, 256, 256, 128, 128).unwrap();
        assert_eq!(g.origins(), &[(0, 0)]);
    }

    #[test]
    fn non_aligned_dims_pad_to_next_stride_multiple() {
        let g = plan_grid(1000, 863, 256, 256, 128, 128).unwrap();
        // Smallest pads making (dim + pad - 256) a multiple of 128.
        let expect_pad = |n: usize| (0..128).find(|p| (n + p - 256) % 128 == 0).unwrap();
        assert_eq!(g.pad_bottom(), expect_pad(1000));
        assert_eq!(g.pad_right(), expect_pad(863));
        assert_eq!((g.pad_bottom(), g.pad_right()), (24, 33));
        assert_eq!(g.origins(), enumerate_origins(&g).as_slice());
        assert_eq!(g.len(), closed_form_count(&g));
    }

    #[test]
    fn small_image_pads_up_to_patch() {
        let g = plan_grid(100, 30, 128, 128, 64, 64).unwrap();
        assert_eq!(g.padded_dims(), (128, 128));
        assert_eq!(g.len(), 1);
        let img = pseudo_random_image(3, 100, 30, 4);
        let back = merge(&split(&img, &g).unwrap(), &g, 3).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn stride_larger_than_patch_is_rejected() {
        assert!(matches!(plan_grid(64, 64, 8, 8, 9, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(plan_grid(64, 64, 8, 8, 4, 9), Err(Error::InvalidArgument(_))));
        assert!(plan_grid(0, 64, 8, 8, 4, 4).is_err());
    }

    #[test]
    fn non_overlapping_split_gives_quadrants() {
        let img = ImageTensor::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f32 / 16.0).unwrap();
        let g = plan_grid(4, 4, 2, 2, 2, 2).unwrap();
        let patches = split(&img, &g).unwrap();
        assert_eq!(patches.len(), 4);
        for (p, &(y0, x0)) in patches.iter().zip(g.origins()) {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(p.get(0, y, x), img.get(0, y0 + y, x0 + x));
                }
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let img = ImageTensor::filled(3, 37, 21, 0.25).unwrap();
        let g = plan_grid(37, 21, 16, 8, 5, 3).unwrap();
        for p in split(&img, &g).unwrap() {
            assert!(p.data().iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn split_matches_naive_padded_copy() {
        let img = pseudo_random_image(3, 16, 16, 1);
        let g = plan_grid(16, 16, 8, 8, 4, 4).unwrap();
        let odd = pseudo_random_image(1, 13, 11, 2);
        let g_odd = plan_grid(13, 11, 8, 8, 4, 4).unwrap();
        for (img, g) in [(&img, &g), (&odd, &g_odd)] {
            let (ih, iw) = g.padded_dims();
            let (h, w) = img.dims();
            // numpy-style "reflect" padding built explicitly
            let mirror = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
            let padded: Vec<Vec<Vec<f32>>> = (0..img.channels())
                .map(|c| {
                    (0..ih)
                        .map(|y| (0..iw).map(|x| img.get(c, mirror(y, h), mirror(x, w))).collect())
                        .collect()
                })
                .collect();
            for (p, &(y0, x0)) in split(img, g).unwrap().iter().zip(g.origins()) {
                for (c, plane) in padded.iter().enumerate() {
                    for y in 0..8 {
                        for x in 0..8 {
                            assert_eq!(p.get(c, y, x), plane[y0 + y][x0 + x]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reflect_folds_repeatedly() {
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(5, 1), 0);
        assert_eq!((0..8).map(|i| reflect_index(i, 3)).collect::<Vec<_>>(), vec![0, 1, 2, 1, 0, 1, 2, 1]);
    }

    #[test]
    fn two_patch_overlap_averages_to_half() {
        let g = plan_grid(4, 6, 4, 4, 2, 2).unwrap();
        assert_eq!(g.len(), 2);
        let zero = ImageTensor::zeros(1, 4, 4).unwrap();
        let one = ImageTensor::filled(1, 4, 4, 1.0).unwrap();
        let out = merge(&[zero, one], &g, 1).unwrap();
        for y in 0..4 {
            assert_eq!(out.get(0, y, 0), 0.0);
            assert_eq!(out.get(0, y, 2), 0.5);
            assert_eq!(out.get(0, y, 3), 0.5);
            assert_eq!(out.get(0, y, 5), 1.0);
        }
    }

    #[test]
    fn merge_rejects_wrong_inputs() {
        let g = plan_grid(8, 8, 4, 4, 4, 4).unwrap();
        let p = ImageTensor::zeros(1, 4, 4).unwrap();
        assert!(merge(std::slice::from_ref(&p), &g, 1).is_err());
        let wrong = ImageTensor::zeros(1, 4, 3).unwrap();
        assert!(merge(&[p.clone(), p.clone(), p.clone(), wrong], &g, 1).is_err());
        assert!(split(&ImageTensor::zeros(1, 9, 8).unwrap(), &g).is_err());
    }

    #[test]
    fn merge_matches_double_precision_accumulator() {
        for case in 0..100u64 {
            let h = 5 + (case as usize * 7) % 40;
            let w = 5 + (case as usize * 13) % 40;
            let ph = 1 + (case as usize * 3) % 16;
            let pw = 1 + (case as usize * 5) % 16;
            let sy = 1 + (case as usize) % ph;
            let sx = 1 + (case as usize * 11) % pw;
            let channels = if case % 2 == 0 { 1 } else { 3 };
            let g = plan_grid(h, w, ph, pw, sy, sx).unwrap();
            let patches: Vec<ImageTensor> = (0..g.len())
                .map(|i| pseudo_random_image(channels, ph, pw, case * 1000 + i as u64))
                .collect();
            let out = merge(&patches, &g, channels).unwrap();

            let (ih, iw) = g.padded_dims();
            let mut sum = vec![0f64; channels * ih * iw];
            let mut count = vec![0f64; ih * iw];
            for (p, &(y0, x0)) in patches.iter().zip(g.origins()) {
                for y in 0..ph {
                    for x in 0..pw {
                        count[(y0 + y) * iw + x0 + x] += 1.0;
                        for c in 0..channels {
                            sum[(c * ih + y0 + y) * iw + x0 + x] += p.get(c, y, x) as f64;
                        }
                    }
                }
            }
            for c in 0..channels {
                for y in 0..h {
                    for x in 0..w {
                        let expect = sum[(c * ih + y) * iw + x] / count[y * iw + x];
                        assert!((out.get(c, y, x) as f64 - expect).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_counts_are_positive() {
        let g = plan_grid(1000, 863, 256, 256, 128, 128).unwrap();
        let (rows, cols) = g.coverage();
        assert!(rows.iter().chain(&cols).all(|&c| c >= 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn merge_of_split_round_trips(
            h in 1usize..48, w in 1usize..48, ph in 1usize..20, pw in 1usize..20,
            sy_frac in 0.0f64..1.0, sx_frac in 0.0f64..1.0, seed in any::<u64>(),
        ) {
            let sy = 1 + ((ph - 1) as f64 * sy_frac) as usize;
            let sx = 1 + ((pw - 1) as f64 * sx_frac) as usize;
            let g = plan_grid(h, w, ph, pw, sy, sx).unwrap();
            let img = pseudo_random_image(3, h, w, seed);
            let back = merge(&split(&img, &g).unwrap(), &g, 3).unwrap();
            prop_assert!(back.max_abs_diff(&img) <= 1e-6);
            prop_assert_eq!(g.len(), closed_form_count(&g));
            let expected = enumerate_origins(&g);
            prop_assert_eq!(g.origins(), expected.as_slice());
        }

        #[test]
        fn merge_is_order_insensitive(seed in any::<u64>(), rot in 0usize..50) {
            let g = plan_grid(23, 31, 8, 12, 3, 5).unwrap();
            let patches: Vec<ImageTensor> = (0..g.len())
                .map(|i| pseudo_random_image(1, 8, 12, seed ^ (i as u64) << 7))
                .collect();
            let reference = merge(&patches, &g, 1).unwrap();
            // Accumulate the same (origin, patch) pairs in a rotated order.
            let (ih, iw) = g.padded_dims();
            let n = g.len();
            let mut sum = vec![0f64; ih * iw];
            let mut count = vec![0f64; ih * iw];
            for j in 0..n {
                let i = (j + rot) % n;
                let (y0, x0) = g.origins()[i];
                for y in 0..8 {
                    for x in 0..12 {
                        sum[(y0 + y) * iw + x0 + x] += patches[i].get(0, y, x) as f64;
                        count[(y0 + y) * iw + x0 + x] += 1.0;
                    }
                }
            }
            for y in 0..23 {
                for x in 0..31 {
                    let v = (sum[y * iw + x] / count[y * iw + x]) as f32;
                    prop_assert!((reference.get(0, y, x) - v).abs() <= 1e-6);
                }
            }
        }
    }
}
