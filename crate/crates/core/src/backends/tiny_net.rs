//! A small fully-convolutional U-Net evaluated on the CPU.
//!
//! Layout for `widths = [w0, …, wn]`:
//!
//! * `stage{i}`: 3×3 conv → `+` time bias → leaky ReLU (0.2). With
//!   `downsample`, the last stage runs at half resolution after a 2×2 average
//!   pool.
//! * `up` (only with `downsample`): nearest ×2 upsample, concat with the output
//!   of the second-to-last stage, 3×3 conv → `+` time bias → leaky ReLU.
//! * `out`: linear 3×3 conv to `out_channels`.
//!
//! The time bias of a stage is `W · emb(t) + b` where `emb` is the usual
//! sinusoidal embedding. All convolutions zero-pad by one pixel.

use rayon::prelude::*;

use super::weights::WeightArchive;
use crate::error::{Error, Result, WeightError};

const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TinyUNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: Vec<usize>,
    pub downsample: bool,
    /// Sinusoidal embedding size; `0` disables time conditioning.
    pub time_dim: usize,
}

impl TinyUNetSpec {
    /// Denoiser layout: `z_t ‖ x ‖ c` (7 channels) in, 3 out.
    pub fn denoiser_default() -> Self {
        Self {
            in_channels: 7,
            out_channels: 3,
            widths: vec![16, 32, 64],
            downsample: true,
            time_dim: 64,
        }
    }

    /// Structure predictor layout: RGB in, one logit map out.
    pub fn predictor_default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            widths: vec![16, 32, 64],
            downsample: true,
            time_dim: 0,
        }
    }

    /// Spatial dims must be divisible by this.
    pub fn down_factor(&self) -> usize {
        if self.downsample {
            2
        } else {
            1
        }
    }

    fn check(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.contains(&0) {
            return Err(Error::invalid("network channel counts must be positive"));
        }
        if self.downsample && self.widths.len() < 2 {
            return Err(Error::invalid("a downsampling network needs at least two stages"));
        }
        Ok(())
    }

    fn conv_layers(&self) -> Vec<(String, usize, usize, bool)> {
        let mut layers = Vec::new();
        let mut prev = self.in_channels;
        for (i, &w) in self.widths.iter().enumerate() {
            layers.push((format!("stage{i}"), prev, w, true));
            prev = w;
        }
        if self.downsample {
            let n = self.widths.len();
            let skip = self.widths[n - 2];
            layers.push(("up".to_string(), self.widths[n - 1] + skip, skip, true));
            prev = skip;
        }
        layers.push(("out".to_string(), prev, self.out_channels, false));
        layers
    }

    /// Every tensor the network needs, with its shape.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (name, cin, cout, timed) in self.conv_layers() {
            out.push((format!("{name}.conv.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("{name}.conv.bias"), vec![cout]));
            if timed && self.time_dim > 0 {
                out.push((format!("{name}.time.weight"), vec![cout, self.time_dim]));
                out.push((format!("{name}.time.bias"), vec![cout]));
            }
        }
        out
    }

    /// Reads the layout back from tensor names and shapes.
    pub fn infer(archive: &WeightArchive) -> Result<Self> {
        let shape = |name: &str| {
            archive
                .get(name)
                .map(|t| t.shape.clone())
                .ok_or_else(|| WeightError::MissingTensor(name.to_string()))
        };
        let mut widths = Vec::new();
        while let Some(t) = archive.get(&format!("stage{}.conv.weight", widths.len())) {
            widths.push(*t.shape.first().unwrap_or(&0));
        }
        let out_shape = shape("out.conv.weight")?;
        if out_shape.len() != 4 {
            return Err(WeightError::ShapeMismatch {
                name: "out.conv.weight".into(),
                expected: vec![0, 0, 3, 3],
                found: out_shape,
            }
            .into());
        }
        let in_channels = match widths.first() {
            Some(_) => shape("stage0.conv.weight")?.get(1).copied().unwrap_or(0),
            None => out_shape[1],
        };
        let time_dim = archive
            .get("stage0.time.weight")
            .and_then(|t| t.shape.get(1).copied())
            .unwrap_or(0);
        let spec = Self {
            in_channels,
            out_channels: out_shape[0],
            widths,
            downsample: archive.get("up.conv.weight").is_some(),
            time_dim,
        };
        spec.check()?;
        spec.validate(archive)?;
        Ok(spec)
    }

    /// Checks the archive holds every tensor with the expected shape.
    pub fn validate(&self, archive: &WeightArchive) -> Result<(), WeightError> {
        for (name, expected) in self.tensor_shapes() {
            let t = archive
                .get(&name)
                .ok_or_else(|| WeightError::MissingTensor(name.clone()))?;
            if t.shape != expected {
                return Err(WeightError::ShapeMismatch {
                    name,
                    expected,
                    found: t.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

/// `channels × height × width` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "feature map data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Stacks planes from several sources along the channel axis.
    pub fn concat(parts: &[(&[f32], usize)], height: usize, width: usize) -> Result<Self> {
        let channels = parts.iter().map(|p| p.1).sum();
        let mut data = Vec::with_capacity(channels * height * width);
        for &(d, c) in parts {
            if d.len() != c * height * width {
                return Err(Error::invalid("concat part has the wrong size"));
            }
            data.extend_from_slice(d);
        }
        Self::new(channels, height, width, data)
    }

    fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Transformer-style sinusoidal embedding: `sin` in the first half, `cos` in
/// the second.
pub fn timestep_embedding(t: f64, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut emb = vec![0f32; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        emb[i] = (t * freq).sin() as f32;
        emb[half + i] = (t * freq).cos() as f32;
    }
    emb
}

#[derive(Clone, Debug)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
    time: Option<(Vec<f32>, Vec<f32>)>,
}

impl ConvLayer {
    fn from_archive(archive: &WeightArchive, name: &str, cin: usize, cout: usize, time_dim: usize) -> Self {
        let take = |n: String| archive.get(&n).map(|t| t.data.clone()).unwrap_or_default();
        let time = (time_dim > 0).then(|| (take(format!("{name}.time.weight")), take(format!("{name}.time.bias"))));
        Self {
            cin,
            cout,
            weight: take(format!("{name}.conv.weight")),
            bias: take(format!("{name}.conv.bias")),
            time,
        }
    }

    /// Per-output-channel bias including the projected time embedding.
    fn channel_bias(&self, emb: &[f32]) -> Vec<f32> {
        let mut bias = self.bias.clone();
        if let Some((tw, tb)) = &self.time {
            for (o, b) in bias.iter_mut().enumerate() {
                let proj: f32 = tw[o * emb.len()..(o + 1) * emb.len()]
                    .iter()
                    .zip(emb)
                    .map(|(w, e)| w * e)
                    .sum();
                *b += proj + tb[o];
            }
        }
        bias
    }

    fn forward(&self, input: &FeatureMap, emb: &[f32], activate: bool) -> FeatureMap {
        debug_assert_eq!(input.channels, self.cin);
        let (h, w) = (input.height, input.width);
        let bias = self.channel_bias(emb);
        let mut out = vec![0f32; self.cout * h * w];
        out.par_chunks_mut(h * w).enumerate().for_each(|(o, dst)| {
            dst.fill(bias[o]);
            for i in 0..self.cin {
                let src = input.plane(i);
                let kernel = &self.weight[(o * self.cin + i) * 9..][..9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = kernel[ky * 3 + kx];
                        if k == 0.0 {
                            continue;
                        }
                        let (y_lo, y_hi) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                        let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let drow = &mut dst[y * w + x_lo..y * w + x_hi];
                            let srow = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                            for (d, s) in drow.iter_mut().zip(srow) {
                                *d += k * s;
                            }
                        }
                    }
                }
            }
            if activate {
                for v in dst.iter_mut() {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
            }
        });
        FeatureMap {
            channels: self.cout,
            height: h,
            width: w,
            data: out,
        }
    }
}

fn avg_pool2(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut data = Vec::with_capacity(input.channels * h * w);
    for c in 0..input.channels {
        let p = input.plane(c);
        let iw = input.width;
        for y in 0..h {
            for x in 0..w {
                let s = p[2 * y * iw + 2 * x]
                    + p[2 * y * iw + 2 * x + 1]
                    + p[(2 * y + 1) * iw + 2 * x]
                    + p[(2 * y + 1) * iw + 2 * x + 1];
                data.push(s * 0.25);
            }
        }
    }
    FeatureMap {
        channels: input.channels,
        height: h,
        width: w,
        data,
    }
}

fn upsample_nearest2(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut data = Vec::with_capacity(input.channels * h * w);
    for c in 0..input.channels {
        let p = input.plane(c);
        for y in 0..h {
            let row = &p[(y / 2) * input.width..][..input.width];
            data.extend((0..w).map(|x| row[x / 2]));
        }
    }
    FeatureMap {
        channels: input.channels,
        height: h,
        width: w,
        data,
    }
}

/// Weights bound to a layout; immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct TinyUNet {
    spec: TinyUNetSpec,
    stages: Vec<ConvLayer>,
    up: Option<ConvLayer>,
    out: ConvLayer,
}

impl TinyUNet {
    pub fn new(spec: TinyUNetSpec, archive: &WeightArchive) -> Result<Self> {
        spec.check()?;
        spec.validate(archive)?;
        let layers = spec.conv_layers();
        let build = |(name, cin, cout, timed): &(String, usize, usize, bool)| {
            ConvLayer::from_archive(archive, name, *cin, *cout, if *timed { spec.time_dim } else { 0 })
        };
        let n = spec.widths.len();
        let stages = layers[..n].iter().map(build).collect();
        let up = spec.downsample.then(|| build(&layers[n]));
        let out = build(layers.last().expect("output layer"));
        Ok(Self { spec, stages, up, out })
    }

    /// Infers the layout from the archive, then binds the weights.
    pub fn from_archive(archive: &WeightArchive) -> Result<Self> {
        let spec = TinyUNetSpec::infer(archive)?;
        Self::new(spec, archive)
    }

    /// All-zero weights for `spec`.
    pub fn zeros(spec: TinyUNetSpec) -> Result<Self> {
        let archive = zero_archive(&spec)?;
        Self::new(spec, &archive)
    }

    pub fn spec(&self) -> &TinyUNetSpec {
        &self.spec
    }

    pub fn accepts(&self, h: usize, w: usize) -> bool {
        let f = self.spec.down_factor();
        h > 0 && w > 0 && h % f == 0 && w % f == 0
    }

    pub fn forward(&self, input: &FeatureMap, t: f64) -> Result<FeatureMap> {
        tiny_net_forward(self, input, t)
    }
}

/// Archive of zeros with every tensor `spec` needs.
pub fn zero_archive(spec: &TinyUNetSpec) -> Result<WeightArchive> {
    let mut archive = WeightArchive::new();
    for (name, shape) in spec.tensor_shapes() {
        let n = shape.iter().product();
        archive.insert(name, shape, vec![0.0; n])?;
    }
    Ok(archive)
}

/// Runs the network on one `C × h × w` input at timestep `t`.
pub fn tiny_net_forward(net: &TinyUNet, input: &FeatureMap, t: f64) -> Result<FeatureMap> {
    let spec = &net.spec;
    if input.channels != spec.in_channels {
        return Err(Error::invalid(format!(
            "network expects {} input channels, got {}",
            spec.in_channels, input.channels
        )));
    }
    if !net.accepts(input.height, input.width) {
        return Err(Error::invalid(format!(
            "input {}x{} is not divisible by the downsample factor {}",
            input.height,
            input.width,
            spec.down_factor()
        )));
    }
    let emb = timestep_embedding(t, spec.time_dim);
    let n = net.stages.len();
    let mut x = input.clone();
    let mut skip = None;
    for (i, stage) in net.stages.iter().enumerate() {
        if spec.downsample && i == n - 1 {
            let pooled = avg_pool2(&x);
            skip = Some(std::mem::replace(&mut x, pooled));
        }
        x = stage.forward(&x, &emb, true);
    }
    if let (Some(up), Some(skip)) = (&net.up, skip) {
        let upsampled = upsample_nearest2(&x);
        let cat = FeatureMap::concat(
            &[(&upsampled.data, upsampled.channels), (&skip.data, skip.channels)],
            skip.height,
            skip.width,
        )?;
        x = up.forward(&cat, &emb, true);
    }
    let out = net.out.forward(&x, &emb, false);
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("network produced a non-finite activation".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_archive(spec: &TinyUNetSpec, seed: u64, scale: f32) -> WeightArchive {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut archive = WeightArchive::new();
        for (name, shape) in spec.tensor_shapes() {
            let n: usize = shape.iter().product();
            archive
                .insert(name, shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
                .unwrap();
        }
        archive
    }

    fn random_input(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let spec = TinyUNetSpec::denoiser_default();
        let mut archive = zero_archive(&spec).unwrap();
        let bias = vec![0.25, -0.5, 1.5];
        let idx = archive.tensors().iter().position(|t| t.name == "out.conv.bias").unwrap();
        let mut tensors: Vec<_> = archive.tensors().to_vec();
        tensors[idx].data = bias.clone();
        archive = WeightArchive::new();
        for t in tensors {
            archive.insert(t.name, t.shape, t.data).unwrap();
        }
        let net = TinyUNet::new(spec, &archive).unwrap();
        let out = net.forward(&random_input(7, 8, 8, 1), 3.0).unwrap();
        for (c, &b) in bias.iter().enumerate() {
            assert!(out.plane(c).iter().all(|&v| v == b));
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let spec = TinyUNetSpec {
            in_channels: 1,
            out_channels: 1,
            widths: vec![],
            downsample: false,
            time_dim: 0,
        };
        let mut archive = WeightArchive::new();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        archive.insert("out.conv.weight", vec![1, 1, 3, 3], k).unwrap();
        archive.insert("out.conv.bias", vec![1], vec![0.0]).unwrap();
        let net = TinyUNet::from_archive(&archive).unwrap();
        assert_eq!(net.spec(), &spec);
        let input = random_input(1, 5, 7, 2);
        assert_eq!(net.forward(&input, 0.0).unwrap().data, input.data);
    }

    #[test]
    fn two_layer_net_matches_hand_arithmetic() {
        // stage0: 1->1 conv, leaky; out: 1->1 conv, linear.
        let mut archive = WeightArchive::new();
        let k1 = vec![0.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, 0.0];
        let k2 = vec![0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0];
        archive.insert("stage0.conv.weight", vec![1, 1, 3, 3], k1.clone()).unwrap();
        archive.insert("stage0.conv.bias", vec![1], vec![0.5]).unwrap();
        archive.insert("out.conv.weight", vec![1, 1, 3, 3], k2.clone()).unwrap();
        archive.insert("out.conv.bias", vec![1], vec![-0.25]).unwrap();
        let net = TinyUNet::from_archive(&archive).unwrap();
        let input: Vec<f32> = vec![
            0.1, 0.9, 0.3, 0.0, //
            0.5, 0.2, 0.8, 0.4, //
            1.0, 0.0, 0.6, 0.7, //
            0.3, 0.3, 0.1, 0.9,
        ];
        let out = net.forward(&FeatureMap::new(1, 4, 4, input.clone()).unwrap(), 0.0).unwrap();

        let at = |g: &[f32], y: i32, x: i32| {
            if (0..4).contains(&y) && (0..4).contains(&x) {
                g[(y * 4 + x) as usize]
            } else {
                0.0
            }
        };
        let conv = |g: &[f32], k: &[f32], b: f32| {
            let mut o = vec![0f32; 16];
            for y in 0..4i32 {
                for x in 0..4i32 {
                    let mut s = b;
                    for ky in 0..3i32 {
                        for kx in 0..3i32 {
                            s += k[(ky * 3 + kx) as usize] * at(g, y + ky - 1, x + kx - 1);
                        }
                    }
                    o[(y * 4 + x) as usize] = s;
                }
            }
            o
        };
        let hidden: Vec<f32> = conv(&input, &k1, 0.5)
            .into_iter()
            .map(|v| if v < 0.0 { 0.2 * v } else { v })
            .collect();
        let expected = conv(&hidden, &k2, -0.25);
        // Spot-check one value by hand: hidden(0,0) = 0.5 + 0.9 + 0.5 - 0.2 = 1.7
        assert!((hidden[0] - 1.7).abs() < 1e-6);
        for (a, b) in out.data.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic_across_thread_counts() {
        let spec = TinyUNetSpec::denoiser_default();
        let net = TinyUNet::new(spec.clone(), &random_archive(&spec, 4, 0.2)).unwrap();
        let input = random_input(7, 16, 12, 5);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| net.forward(&input, 17.0).unwrap());
        let b = four.install(|| net.forward(&input, 17.0).unwrap());
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn timestep_changes_output() {
        let spec = TinyUNetSpec::denoiser_default();
        let net = TinyUNet::new(spec.clone(), &random_archive(&spec, 6, 0.2)).unwrap();
        let input = random_input(7, 8, 8, 7);
        let a = net.forward(&input, 1.0).unwrap();
        let b = net.forward(&input, 500.0).unwrap();
        assert_ne!(a.data, b.data);
    }

    #[test]
    fn rejects_bad_inputs_and_archives() {
        let spec = TinyUNetSpec::denoiser_default();
        let net = TinyUNet::zeros(spec.clone()).unwrap();
        assert!(net.forward(&random_input(7, 7, 8, 1), 0.0).is_err());
        assert!(net.forward(&random_input(3, 8, 8, 1), 0.0).is_err());

        let mut archive = WeightArchive::new();
        for (name, shape) in spec.tensor_shapes() {
            let shape = if name == "stage1.conv.bias" { vec![31] } else { shape };
            let n = shape.iter().product();
            archive.insert(name, shape, vec![0.0; n]).unwrap();
        }
        assert!(matches!(
            TinyUNet::new(spec.clone(), &archive),
            Err(Error::Weights(WeightError::ShapeMismatch { .. }))
        ));
        assert!(matches!(
            TinyUNet::new(spec, &WeightArchive::new()),
            Err(Error::Weights(WeightError::MissingTensor(_)))
        ));
    }

    #[test]
    fn layout_is_inferred_from_archive() {
        for spec in [TinyUNetSpec::denoiser_default(), TinyUNetSpec::predictor_default()] {
            let archive = random_archive(&spec, 1, 0.1);
            assert_eq!(TinyUNetSpec::infer(&archive).unwrap(), spec);
        }
    }

    #[test]
    fn embedding_layout() {
        let e = timestep_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let e = timestep_embedding(2.0, 4);
        assert!((e[0] - 2f32.sin()).abs() < 1e-7);
        assert!((e[1] - (2.0f64 * 0.01).sin() as f32).abs() < 1e-7);
    }
}
