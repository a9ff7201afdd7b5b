//! Structure-predictor and denoiser interfaces plus the implementations the
//! engine ships with.
//!
//! Backends are immutable once built and are called concurrently from worker
//! threads, hence the `Send + Sync` bounds.

mod tiny_net;
mod weights;

use std::collections::HashSet;

pub use tiny_net::{tiny_net_forward, timestep_embedding, zero_archive, FeatureMap, TinyUNet, TinyUNetSpec};
pub use weights::{NamedTensor, WeightArchive, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::tiling::{extract_patch, plan_grid, PatchGrid};

/// Maps a corrupted RGB patch to a single-channel text-foreground map in `[0, 1]`.
pub trait StructurePredictor: Send + Sync {
    /// Whether the backend can run on an `h × w` patch directly.
    fn accepts(&self, _h: usize, _w: usize) -> bool {
        true
    }

    fn predict(&self, patch: &ImageTensor) -> Result<ImageTensor>;
}

/// Everything a denoiser sees for one patch.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseInput<'a> {
    /// Current noisy latent patch, 3 channels.
    pub z_t: &'a ImageTensor,
    /// Timestep in `1..=T` of the inference schedule.
    pub t: usize,
    /// Corrupted image patch, 3 channels.
    pub x: &'a ImageTensor,
    /// Structure map patch, 1 channel.
    pub c: &'a ImageTensor,
    /// Top-left corner of the patch in the padded working image.
    pub origin: (usize, usize),
}

/// Predicts the clean patch `ẑ0` from `(z_t, t, x, c)`.
pub trait Denoiser: Send + Sync {
    fn accepts(&self, _h: usize, _w: usize) -> bool {
        true
    }

    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<ImageTensor>;
}

/// Returns the corrupted patch unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<ImageTensor> {
        Ok(input.x.clone())
    }
}

/// Serves the clean document's pixels at each queried patch origin.
///
/// Only origins of the grids it was built with are answered, so a mis-planned
/// grid shows up as an error instead of silently matching.
#[derive(Clone, Debug)]
pub struct GroundTruthDenoiser {
    clean: ImageTensor,
    grids: Vec<PatchGrid>,
    known: HashSet<(usize, usize, usize, usize)>,
}

impl GroundTruthDenoiser {
    pub fn new(clean: ImageTensor, grids: &[PatchGrid]) -> Result<Self> {
        if clean.channels() != 3 {
            return Err(Error::invalid("ground-truth document must have 3 channels"));
        }
        let mut known = HashSet::new();
        for g in grids {
            if g.orig_dims() != clean.dims() {
                return Err(Error::invalid("grid was planned for a different document size"));
            }
            let (ph, pw) = g.patch_dims();
            known.extend(g.origins().iter().map(|&(y, x)| (ph, pw, y, x)));
        }
        Ok(Self {
            clean,
            grids: grids.to_vec(),
            known,
        })
    }
}

impl Denoiser for GroundTruthDenoiser {
    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<ImageTensor> {
        let (ph, pw) = input.z_t.dims();
        let (y, x) = input.origin;
        if !self.known.contains(&(ph, pw, y, x)) {
            return Err(Error::invalid(format!(
                "no {ph}x{pw} patch registered at origin ({y}, {x})"
            )));
        }
        let grid = self
            .grids
            .iter()
            .find(|g| g.patch_dims() == (ph, pw))
            .expect("registered patch size has a grid");
        let index = grid
            .origins()
            .iter()
            .position(|&o| o == (y, x))
            .expect("registered origin is on its grid");
        extract_patch(&self.clean, grid, index)
    }
}

/// Predicts the same value everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPredictor(f32);

impl ConstantPredictor {
    pub fn new(value: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("constant structure value {value} outside [0, 1]")));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f32 {
        self.0
    }
}

impl StructurePredictor for ConstantPredictor {
    fn predict(&self, patch: &ImageTensor) -> Result<ImageTensor> {
        ImageTensor::filled(1, patch.height(), patch.width(), self.0)
    }
}

/// Rec. 601 luma of the patch; pixel-local, so tiling cannot change its output.
#[derive(Clone, Copy, Debug, Default)]
pub struct LuminancePredictor;

/// Luma of a 3-channel image (or a copy of a 1-channel one), clamped to `[0, 1]`.
pub fn luminance(img: &ImageTensor) -> ImageTensor {
    let (h, w) = img.dims();
    if img.channels() == 1 {
        let mut out = img.clone();
        out.clamp01();
        return out;
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..h * w)
        .map(|i| (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).clamp(0.0, 1.0))
        .collect();
    ImageTensor::from_raw(1, h, w, data)
}

impl StructurePredictor for LuminancePredictor {
    fn predict(&self, patch: &ImageTensor) -> Result<ImageTensor> {
        Ok(luminance(patch))
    }
}

/// Tiny U-Net denoiser over the 7-channel `z_t ‖ x ‖ c` stack.
#[derive(Clone, Debug)]
pub struct TinyNetDenoiser {
    net: TinyUNet,
}

impl TinyNetDenoiser {
    pub fn new(net: TinyUNet) -> Result<Self> {
        let spec = net.spec();
        if spec.in_channels != 7 || spec.out_channels != 3 {
            return Err(Error::invalid(format!(
                "denoiser network must map 7 channels to 3, got {} -> {}",
                spec.in_channels, spec.out_channels
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &TinyUNet {
        &self.net
    }
}

impl Denoiser for TinyNetDenoiser {
    fn accepts(&self, h: usize, w: usize) -> bool {
        self.net.accepts(h, w)
    }

    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<ImageTensor> {
        let (h, w) = input.z_t.dims();
        let stacked = FeatureMap::concat(
            &[(input.z_t.data(), 3), (input.x.data(), 3), (input.c.data(), 1)],
            h,
            w,
        )?;
        let out = self.net.forward(&stacked, input.t as f64)?;
        ImageTensor::new(3, h, w, out.data)
    }
}

/// Tiny U-Net structure predictor; the logit output goes through a sigmoid.
#[derive(Clone, Debug)]
pub struct TinyNetPredictor {
    net: TinyUNet,
}

impl TinyNetPredictor {
    pub fn new(net: TinyUNet) -> Result<Self> {
        let spec = net.spec();
        if spec.in_channels != 3 || spec.out_channels != 1 {
            return Err(Error::invalid(format!(
                "structure network must map 3 channels to 1, got {} -> {}",
                spec.in_channels, spec.out_channels
            )));
        }
        Ok(Self { net })
    }
}

impl StructurePredictor for TinyNetPredictor {
    fn accepts(&self, h: usize, w: usize) -> bool {
        self.net.accepts(h, w)
    }

    fn predict(&self, patch: &ImageTensor) -> Result<ImageTensor> {
        let (h, w) = patch.dims();
        let input = FeatureMap::new(3, h, w, patch.data().to_vec())?;
        let out = self.net.forward(&input, 0.0)?;
        let data = out.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        ImageTensor::new(1, h, w, data)
    }
}

/// Grids for patch scales `1..=k_scales` with base patch `(a, b)` and base
/// stride `(da, db)` over an `h × w` working image.
pub fn scale_grids(
    h: usize,
    w: usize,
    k_scales: usize,
    patch: (usize, usize),
    stride: (usize, usize),
) -> Result<Vec<PatchGrid>> {
    (1..=k_scales)
        .map(|k| plan_grid(h, w, k * patch.0, k * patch.1, k * stride.0, k * stride.1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, |c, y, x| ((c * 5 + y * 3 + x * 7) % 11) as f32 / 10.0).unwrap()
    }

    #[test]
    fn identity_returns_condition() {
        let z = ImageTensor::filled(3, 4, 4, 0.9).unwrap();
        let x = doc(4, 4);
        let c = ImageTensor::zeros(1, 4, 4).unwrap();
        let out = IdentityDenoiser
            .denoise(&DenoiseInput {
                z_t: &z,
                t: 1,
                x: &x,
                c: &c,
                origin: (0, 0),
            })
            .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn constant_predictor() {
        let p = ConstantPredictor::new(0.3).unwrap().predict(&doc(5, 6)).unwrap();
        assert_eq!(p.channels(), 1);
        assert!(p.data().iter().all(|&v| v == 0.3));
        assert!(ConstantPredictor::new(1.5).is_err());
    }

    #[test]
    fn luminance_of_grey_is_grey() {
        let grey = ImageTensor::filled(3, 3, 3, 0.4).unwrap();
        let l = LuminancePredictor.predict(&grey).unwrap();
        assert!(l.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn ground_truth_serves_registered_origins_only() {
        let clean = doc(20, 20);
        let grids = scale_grids(20, 20, 2, (8, 8), (4, 4)).unwrap();
        let gt = GroundTruthDenoiser::new(clean.clone(), &grids).unwrap();
        let z = ImageTensor::zeros(3, 8, 8).unwrap();
        let c = ImageTensor::zeros(1, 8, 8).unwrap();
        let input = |origin| DenoiseInput {
            z_t: &z,
            t: 1,
            x: &z,
            c: &c,
            origin,
        };
        let p = gt.denoise(&input((4, 8))).unwrap();
        assert_eq!(p.get(1, 0, 0), clean.get(1, 4, 8));
        assert!(matches!(gt.denoise(&input((3, 8))), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tiny_backends_check_channel_layout() {
        assert!(TinyNetDenoiser::new(TinyUNet::zeros(TinyUNetSpec::predictor_default()).unwrap()).is_err());
        assert!(TinyNetPredictor::new(TinyUNet::zeros(TinyUNetSpec::denoiser_default()).unwrap()).is_err());
        let p = TinyNetPredictor::new(TinyUNet::zeros(TinyUNetSpec::predictor_default()).unwrap()).unwrap();
        let out = p.predict(&doc(8, 8)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        assert!(!p.accepts(7, 8));
    }

    #[test]
    fn backends_stay_finite_on_random_patches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut archive = WeightArchive::new();
        let spec = TinyUNetSpec::denoiser_default();
        for (name, shape) in spec.tensor_shapes() {
            let n: usize = shape.iter().product();
            archive
                .insert(name, shape, (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect())
                .unwrap();
        }
        let den = TinyNetDenoiser::new(TinyUNet::new(spec, &archive).unwrap()).unwrap();
        let pspec = TinyUNetSpec::predictor_default();
        let pred = TinyNetPredictor::new(TinyUNet::new(pspec.clone(), &zero_archive(&pspec).unwrap()).unwrap()).unwrap();
        for i in 0..1000 {
            let (h, w) = (2 * rng.gen_range(1..5), 2 * rng.gen_range(1..5));
            let mut img = |c| ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-3.0..3.0)).unwrap();
            let (z, x, c) = (img(3), img(3), img(1));
            let input = DenoiseInput {
                z_t: &z,
                t: 1 + i % 2000,
                x: &x,
                c: &c,
                origin: (0, 0),
            };
            assert!(den.denoise(&input).unwrap().data().iter().all(|v| v.is_finite()));
            assert!(IdentityDenoiser.denoise(&input).unwrap().data().iter().all(|v| v.is_finite()));
            let p = pred.predict(&x).unwrap();
            assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(LuminancePredictor.predict(&x).unwrap().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
