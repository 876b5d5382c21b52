use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::resize::resize_depth;
use super::types::{scaled_len, ColorImage, DepthMap, SamplePair};
use crate::error::{Error, Result};
use crate::kv::KvFile;

pub const CONFIG_FILE: &str = "dataset.cfg";
pub const COLOR_DIR: &str = "color";
pub const DEPTH_DIR: &str = "depth";
/// Optional full-resolution depth, read only for evaluation.
pub const DEPTH_HR_DIR: &str = "depth_hr";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizePolicy {
    /// Depth must already have the LR dimensions.
    Strict,
    /// Depth of any size is resized to the LR grid.
    Bilinear,
}

impl std::str::FromStr for ResizePolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "strict" => Ok(ResizePolicy::Strict),
            "bilinear" => Ok(ResizePolicy::Bilinear),
            _ => Err(format!("expected `strict` or `bilinear`, got `{s}`")),
        }
    }
}

impl std::fmt::Display for ResizePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResizePolicy::Strict => "strict",
            ResizePolicy::Bilinear => "bilinear",
        })
    }
}

/// Contents of `dataset.cfg`. Metric depth is `raw / depth_scale`; raw 0 is invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub depth_scale: f64,
    pub d_min: f32,
    pub d_max: f32,
    pub mu: f64,
    pub resize_policy: ResizePolicy,
}

impl DatasetConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_keys(&["depth_scale", "d_min", "d_max", "mu", "resize_policy"])?;
        let cfg = DatasetConfig {
            depth_scale: kv.require("depth_scale")?,
            d_min: kv.require("d_min")?,
            d_max: kv.require("d_max")?,
            mu: kv.require("mu")?,
            resize_policy: kv.get("resize_policy")?.unwrap_or(ResizePolicy::Strict),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_scale > 0.0) {
            return Err(Error::Config("depth_scale must be positive".into()));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(Error::Config("need 0 < d_min < d_max".into()));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config("mu must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("depth_scale", self.depth_scale);
        kv.set("d_min", self.d_min);
        kv.set("d_max", self.d_max);
        kv.set("mu", self.mu);
        kv.set("resize_policy", self.resize_policy);
        kv
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })
    }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    ColorImage::new(h as usize, w as usize, px)
}

pub fn write_color_png(path: &Path, img: &ColorImage) -> Result<()> {
    let raw: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer sized from image");
    save(path, DynamicImage::ImageRgb8(buf))
}

/// Reads 16-bit depth. Raw 0 and values outside `[d_min, d_max]` become invalid.
pub fn read_depth_png(path: &Path, scale: f64, d_min: f32, d_max: f32) -> Result<DepthMap> {
    let img = match open_image(path)? {
        DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::format(
                path,
                format!("expected 16-bit single-channel depth, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = img.dimensions();
    let mut values = Vec::with_capacity((w * h) as usize);
    let mut valid = Vec::with_capacity((w * h) as usize);
    for &raw in img.as_raw() {
        let v = (raw as f64 / scale) as f32;
        let ok = raw != 0 && v >= d_min && v <= d_max;
        values.push(if ok { v } else { 0.0 });
        valid.push(ok);
    }
    DepthMap::new(h as usize, w as usize, values, valid, d_min, d_max)
}

pub fn write_depth_png(path: &Path, d: &DepthMap, scale: f64) -> Result<()> {
    let raw: Vec<u16> = d
        .values()
        .iter()
        .zip(d.valid())
        .map(|(&v, &ok)| {
            if ok {
                (v as f64 * scale).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(d.width() as u32, d.height() as u32, raw)
        .expect("buffer sized from depth");
    save(path, DynamicImage::ImageLuma16(buf))
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads one pair, applying the configured resize policy to the depth grid.
pub fn load_sample(color_path: &Path, depth_path: &Path, cfg: &DatasetConfig) -> Result<SamplePair> {
    let color = read_color_png(color_path)?;
    let depth = read_depth_png(depth_path, cfg.depth_scale, cfg.d_min, cfg.d_max)?;
    let (h, w) = color.dims();
    let want = (scaled_len(h, cfg.mu), scaled_len(w, cfg.mu));
    let depth = if depth.dims() == want {
        depth
    } else {
        match cfg.resize_policy {
            ResizePolicy::Strict => {
                return Err(Error::format(
                    depth_path,
                    format!(
                        "depth is {:?} but a {}x{} image at mu={} needs {:?}",
                        depth.dims(),
                        h,
                        w,
                        cfg.mu,
                        want
                    ),
                ))
            }
            ResizePolicy::Bilinear => resize_depth(&depth, want.0, want.1),
        }
    };
    SamplePair::new(color, depth, cfg.mu, None)
}

/// A dataset directory: filename-matched `color/` and `depth/` PNGs plus `dataset.cfg`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let config = DatasetConfig::read(&root.join(CONFIG_FILE))?;
        let cdir = root.join(COLOR_DIR);
        let mut names = Vec::new();
        for entry in fs::read_dir(&cdir).map_err(|e| Error::io(&cdir, e))? {
            let entry = entry.map_err(|e| Error::io(&cdir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".png") {
                names.push(name);
            }
        }
        names.sort();
        for n in &names {
            let p = root.join(DEPTH_DIR).join(n);
            if !p.is_file() {
                return Err(Error::format(p, "no depth file for this color image"));
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            config,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Loads pair `i`, attaching HR evaluation depth when `depth_hr/` has it.
    pub fn load(&self, i: usize) -> Result<SamplePair> {
        let name = &self.names[i];
        let mut pair = load_sample(
            &self.root.join(COLOR_DIR).join(name),
            &self.root.join(DEPTH_DIR).join(name),
            &self.config,
        )?;
        let hr_path = self.root.join(DEPTH_HR_DIR).join(name);
        if hr_path.is_file() {
            let c = &self.config;
            let hr = read_depth_png(&hr_path, c.depth_scale, c.d_min, c.d_max)?;
            if hr.dims() != pair.color_hr.dims() {
                return Err(Error::format(hr_path, "HR depth does not match the color image"));
            }
            pair.depth_hr_eval = Some(hr);
        }
        Ok(pair)
    }

    pub fn load_all(&self) -> Result<Vec<SamplePair>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

/// Writes pairs as `00000.png`, `00001.png`, ... together with `dataset.cfg`.
pub fn write_dataset(root: &Path, cfg: &DatasetConfig, pairs: &[SamplePair]) -> Result<Vec<String>> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let cfg_path = root.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_kv().to_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut names = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("{i:05}.png");
        write_color_png(&root.join(COLOR_DIR).join(&name), &p.color_hr)?;
        write_depth_png(&root.join(DEPTH_DIR).join(&name), &p.depth_lr, cfg.depth_scale)?;
        if let Some(hr) = &p.depth_hr_eval {
            write_depth_png(&root.join(DEPTH_HR_DIR).join(&name), hr, cfg.depth_scale)?;
        }
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_scene, SyntheticSceneSpec};

    fn cfg() -> DatasetConfig {
        DatasetConfig {
            depth_scale: 1000.0,
            d_min: 1.0,
            d_max: 10.0,
            mu: 0.5,
            resize_policy: ResizePolicy::Strict,
        }
    }

    #[test]
    fn raw_depth_arithmetic_and_zero_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let buf = ImageBuffer::<Luma<u16>, _>::from_raw(2, 1, vec![5000u16, 0]).unwrap();
        DynamicImage::ImageLuma16(buf).save(&p).unwrap();
        let d = read_depth_png(&p, 1000.0, 1.0, 10.0).unwrap();
        assert_eq!(d.get(0, 0), Some(5.0));
        assert_eq!(d.get(0, 1), None);
    }

    #[test]
    fn synthetic_pair_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let pair = generate_synthetic_scene(&SyntheticSceneSpec {
            seed: 2,
            num_rects: 4,
            depth_range: (1.0, 10.0),
            texture_amplitude: 0.3,
            size: (32, 48),
            mu: 0.5,
        })
        .unwrap();
        write_dataset(dir.path(), &cfg(), std::slice::from_ref(&pair)).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.len(), 1);
        let back = ds.load(0).unwrap();
        let q = 1.0 / 1000.0;
        for (a, b) in back.depth_lr.values().iter().zip(pair.depth_lr.values()) {
            assert!((a - b).abs() <= q, "{a} vs {b}");
        }
        let hr = back.depth_hr_eval.unwrap();
        for (a, b) in hr.values().iter().zip(pair.depth_hr_eval.unwrap().values()) {
            assert!((a - b).abs() <= q);
        }
        for (a, b) in back.color_hr.pixels().iter().zip(pair.color_hr.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn strict_policy_rejects_mismatch_and_bilinear_resizes() {
        let dir = tempfile::tempdir().unwrap();
        let (c, d) = (dir.path().join("c.png"), dir.path().join("d.png"));
        write_color_png(&c, &ColorImage::filled(32, 32, [0.5; 3])).unwrap();
        write_depth_png(&d, &DepthMap::dense(32, 32, vec![2.0; 1024], 1.0, 10.0).unwrap(), 1000.0).unwrap();
        assert!(matches!(load_sample(&c, &d, &cfg()), Err(Error::Format { .. })));
        let mut loose = cfg();
        loose.resize_policy = ResizePolicy::Bilinear;
        let pair = load_sample(&c, &d, &loose).unwrap();
        assert_eq!(pair.depth_lr.dims(), (16, 16));
        assert!(pair.depth_lr.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = load_sample(&dir.path().join("a.png"), &dir.path().join("b.png"), &cfg());
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn config_round_trips() {
        let c = cfg();
        assert_eq!(DatasetConfig::from_kv(&c.to_kv()).unwrap(), c);
        let mut kv = c.to_kv();
        kv.set("bogus", 1);
        assert!(DatasetConfig::from_kv(&kv).is_err());
    }
}
