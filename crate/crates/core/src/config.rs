//! `key=value` configuration text for the pipeline parameters.
//!
//! Keys use the short symbol names of the parameters (`m`, `S`, `K`, `a`,
//! `b`, `da`, `db`, `u`, `v`, `h`, `w`, `dh`, `dw`, `T`) plus `max_side`,
//! `seed`, `batch` (comma-separated per-scale denoiser batches) and
//! `structure_batch`. `S=auto` derives the scale count from `m`. Blank lines
//! and lines starting with `#` are ignored.

use std::fmt::Write as _;

use crate::cppd::CppdConfig;
use crate::error::{Error, Result};
use crate::pyramid::PyramidConfig;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineConfig {
    pub pyramid: PyramidConfig,
    pub cppd: CppdConfig,
}

/// Splits configuration text into `(key, value)` pairs, in order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?} as a number")))
}

/// Keys [`PipelineConfig::set`] understands.
pub const PIPELINE_KEYS: [&str; 18] = [
    "m",
    "S",
    "u",
    "v",
    "h",
    "w",
    "dh",
    "dw",
    "max_side",
    "structure_batch",
    "K",
    "a",
    "b",
    "da",
    "db",
    "T",
    "seed",
    "batch",
];

impl PipelineConfig {
    /// Applies one setting. Returns `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let p = &mut self.pyramid;
        let c = &mut self.cppd;
        match key {
            "m" => p.m = parse_num(key, value)?,
            "S" => {
                p.scale_count = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "u" => p.base_u = parse_num(key, value)?,
            "v" => p.base_v = parse_num(key, value)?,
            "h" => p.patch_h = parse_num(key, value)?,
            "w" => p.patch_w = parse_num(key, value)?,
            "dh" => p.stride_y = parse_num(key, value)?,
            "dw" => p.stride_x = parse_num(key, value)?,
            "max_side" => p.max_side = parse_num(key, value)?,
            "structure_batch" => p.batch = parse_num(key, value)?,
            "K" => c.k_scales = parse_num(key, value)?,
            "a" => c.patch_a = parse_num(key, value)?,
            "b" => c.patch_b = parse_num(key, value)?,
            "da" => c.stride_a = parse_num(key, value)?,
            "db" => c.stride_b = parse_num(key, value)?,
            "T" => c.t_infer = parse_num(key, value)?,
            "seed" => c.seed = parse_num(key, value)?,
            "batch" => {
                c.batch_patches = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.cppd.validate()
    }

    /// Every setting in [`PIPELINE_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.pyramid;
        let c = &self.cppd;
        let values = [
            p.m.to_string(),
            p.scale_count.map_or_else(|| "auto".into(), |s| s.to_string()),
            p.base_u.to_string(),
            p.base_v.to_string(),
            p.patch_h.to_string(),
            p.patch_w.to_string(),
            p.stride_y.to_string(),
            p.stride_x.to_string(),
            p.max_side.to_string(),
            p.batch.to_string(),
            c.k_scales.to_string(),
            c.patch_a.to_string(),
            c.patch_b.to_string(),
            c.stride_a.to_string(),
            c.stride_b.to_string(),
            c.t_infer.to_string(),
            c.seed.to_string(),
            c.batch_patches
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ];
        PIPELINE_KEYS.into_iter().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Defaults overridden by `text`; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::invalid(format!("unknown configuration key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo() {
        let text = PipelineConfig::default().to_text();
        for line in [
            "m=4", "S=auto", "u=256", "v=256", "h=256", "w=256", "dh=128", "dw=128", "max_side=4096", "K=2", "a=128",
            "b=128", "da=64", "db=64", "T=1", "batch=64,16",
        ] {
            assert!(text.lines().any(|l| l == line), "missing {line}");
        }
    }

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set("S", "3").unwrap();
        cfg.set("seed", "99").unwrap();
        cfg.set("batch", "8, 4,2").unwrap();
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(
            PipelineConfig::from_text(&PipelineConfig::default().to_text()).unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn parse_errors() {
        assert!(PipelineConfig::from_text("m").is_err());
        assert!(PipelineConfig::from_text("zz=1").is_err());
        assert!(PipelineConfig::from_text("K=two").is_err());
        assert!(PipelineConfig::from_text("K=0").is_err());
        let ok = PipelineConfig::from_text("# comment\n\n  K = 3 \n").unwrap();
        assert_eq!(ok.cppd.k_scales, 3);
    }
}
