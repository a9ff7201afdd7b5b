use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use pyradoc::{
    compose_masked, freeform_mask, inpaint_document, load_image, load_mask, predict_structure, save_image,
    save_mask, ConstantPredictor, Denoiser, IdentityDenoiser, ImageTensor, InferenceOptions, LuminancePredictor,
    MaskParams, MetricReport, Progress, StructurePredictor, TinyNetDenoiser, TinyNetPredictor, TinyUNet,
    TinyUNetSpec, WeightArchive,
};

use crate::args::{
    seed_fallback, EvaluateArgs, GenMaskArgs, InfoArgs, InpaintArgs, PredictorArgs, RuntimeArgs, StructureArgs,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    pyradoc::Error::InvalidArgument(msg.into()).into()
}

fn load_net(path: &Path) -> Result<TinyUNet> {
    let archive = WeightArchive::load(path)?;
    Ok(TinyUNet::from_archive(&archive)?)
}

fn predictor(args: &PredictorArgs) -> Result<Box<dyn StructurePredictor>> {
    let name = args.predictor.as_str();
    if let Some(v) = name.strip_prefix("constant:") {
        let v: f32 = v.parse().map_err(|_| usage(format!("constant predictor value {v:?} is not a number")))?;
        return Ok(Box::new(ConstantPredictor::new(v)?));
    }
    match name {
        "luminance" => Ok(Box::new(LuminancePredictor)),
        "tiny-net" => {
            let path = args
                .predictor_weights
                .as_deref()
                .ok_or_else(|| usage("--predictor tiny-net needs --predictor-weights"))?;
            Ok(Box::new(TinyNetPredictor::new(load_net(path)?)?))
        }
        other => Err(usage(format!(
            "unknown predictor {other:?} (expected luminance, constant:<v> or tiny-net)"
        ))),
    }
}

fn denoiser(name: &str, weights: Option<&Path>) -> Result<Box<dyn Denoiser>> {
    match name {
        "identity" => Ok(Box::new(IdentityDenoiser)),
        "tiny-net" => {
            let path = weights.ok_or_else(|| usage("--denoiser tiny-net needs --denoiser-weights"))?;
            Ok(Box::new(TinyNetDenoiser::new(load_net(path)?)?))
        }
        other => Err(usage(format!("unknown denoiser {other:?} (expected tiny-net or identity)"))),
    }
}

fn options(rt: &RuntimeArgs) -> Result<InferenceOptions> {
    if rt.workers == 0 {
        bail!(usage("--workers must be at least 1"));
    }
    let progress: Option<pyradoc::runtime::ProgressFn> = rt.progress.then(|| {
        Arc::new(|p: Progress| match p {
            Progress::Structure { scale, done, total } if done == total => {
                eprintln!("structure scale {scale}: {total} patches");
            }
            Progress::Denoise { t, k, done, total } if done == total => {
                eprintln!("step {t} scale {k}: {total} patches");
            }
            _ => {}
        }) as pyradoc::runtime::ProgressFn
    });
    Ok(InferenceOptions {
        workers: rt.workers,
        resize_policy: rt.resize_policy.into(),
        progress,
        debug_dir: rt.debug_dir.clone(),
        ..Default::default()
    })
}

/// Grayscale documents are processed as RGB.
fn load_document(path: &Path) -> Result<ImageTensor> {
    let img = load_image(path)?;
    if img.channels() == 3 {
        return Ok(img);
    }
    let (h, w) = img.dims();
    Ok(ImageTensor::from_fn(3, h, w, |_, y, x| img.get(0, y, x))?)
}

fn write_report(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn default_output(input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    input.with_file_name(format!("{stem}.inpainted.png"))
}

pub fn inpaint(args: &InpaintArgs) -> Result<()> {
    let cfg = args.pipeline.resolve()?;
    let opts = options(&args.runtime)?;
    let predictor = predictor(&args.predictor)?;
    let denoiser = denoiser(&args.denoiser, args.denoiser_weights.as_deref())?;
    let mut doc = load_document(&args.input)?;
    if let Some(mask) = &args.mask {
        doc = compose_masked(&doc, &load_mask(mask)?)?;
    }
    let out = inpaint_document(&doc, predictor.as_ref(), denoiser.as_ref(), &cfg.pyramid, &cfg.cppd, &opts)?;
    let path = args.output.clone().unwrap_or_else(|| default_output(&args.input));
    save_image(&out, &path)?;
    if let Some(gt) = &args.gt {
        let truth = load_document(gt)?;
        let mut report = MetricReport::default();
        report.add(path.display().to_string(), &out, &truth)?;
        write_report(&report.summary(), args.report.as_deref())?;
    }
    Ok(())
}

pub fn predict(args: &StructureArgs) -> Result<()> {
    let cfg = args.pipeline.resolve()?;
    let opts = options(&args.runtime)?;
    let predictor = predictor(&args.predictor)?;
    let doc = load_document(&args.input)?;
    let (map, _) = predict_structure(&doc, predictor.as_ref(), &cfg.pyramid, &opts)?;
    save_image(&map, &args.output)?;
    Ok(())
}

pub fn gen_mask(args: &GenMaskArgs) -> Result<()> {
    let mut params = MaskParams::preset(&args.preset)?;
    if let Some(v) = args.parts {
        params.parts = v;
    }
    if let Some(v) = args.max_vertices {
        params.max_vertices = v;
    }
    if let Some(v) = args.max_length {
        params.max_length = v;
    }
    if let Some(v) = args.max_brush_width {
        params.max_brush_width = v;
    }
    if let Some(v) = args.max_angle {
        params.max_angle = v;
    }
    let h = args.height.unwrap_or(args.size);
    let w = args.width.unwrap_or(args.size);
    let mask = freeform_mask(h, w, &params, seed_fallback(args.seed)?)?;
    save_mask(&mask, &args.output)?;
    Ok(())
}

/// `(name, prediction, truth)` triples; directories pair up by file name.
fn evaluation_pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !pred.is_dir() {
        let name = pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, pred.to_path_buf(), gt.to_path_buf())]);
    }
    if !gt.is_dir() {
        bail!(usage("--pred is a directory, so --gt must be one too"));
    }
    let entries = std::fs::read_dir(pred).with_context(|| format!("listing {}", pred.display()))?;
    let mut pairs = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("listing {}", pred.display()))?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) != Some(true) {
            continue;
        }
        let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
        pairs.push((name.clone(), path, gt.join(&name)));
    }
    if pairs.is_empty() {
        bail!(usage(format!("no PNG files in {}", pred.display())));
    }
    pairs.sort();
    Ok(pairs)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut report = MetricReport::default();
    for (name, pred, gt) in evaluation_pairs(&args.pred, &args.gt)? {
        report.add(name, &load_image(&pred)?, &load_image(&gt)?)?;
    }
    write_report(&(report.lines() + &report.summary()), args.report.as_deref())
}

fn weight_summary(path: &Path) -> Result<String> {
    let archive = WeightArchive::load(path)?;
    let mut out = String::new();
    writeln!(out, "# weights {}", path.display())?;
    writeln!(
        out,
        "#   format v{}, {} tensors, {} parameters",
        archive.version(),
        archive.len(),
        archive.parameter_count()
    )?;
    match TinyUNetSpec::infer(&archive) {
        Ok(spec) => writeln!(
            out,
            "#   tiny-net {}->{} channels, widths {:?}, downsample {}, time embedding {}",
            spec.in_channels, spec.out_channels, spec.widths, spec.downsample, spec.time_dim
        )?,
        Err(e) => writeln!(out, "#   not a tiny-net layout: {e}")?,
    }
    Ok(out)
}

/// Config echo as `key=value` lines; everything else is a `#` comment so the
/// output can be fed back through `--config`.
pub fn info(args: &InfoArgs) -> Result<()> {
    let cfg = args.pipeline.resolve()?;
    let mut out = format!("# pyradoc {}\n", env!("CARGO_PKG_VERSION"));
    out.push_str(&cfg.to_text());
    for path in &args.weights {
        out.push_str(&weight_summary(path)?);
    }
    print!("{out}");
    Ok(())
}
