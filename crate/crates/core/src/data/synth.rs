//! Deterministic synthetic forgeries: procedural backgrounds with
//! splice, copy-move and removal edits, each sample from its own RNG stream.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self};
use image::{ImageFormat, Rgb, Rgb32FImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{derive_edge_gt, BinaryMask, Manifest, Record, Split, DEFAULT_EDGE_WIDTH};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeryKind {
    Splice,
    CopyMove,
    Removal,
    Authentic,
}

impl ForgeryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Splice => "splice",
            Self::CopyMove => "copy_move",
            Self::Removal => "removal",
            Self::Authentic => "authentic",
        }
    }
}

impl fmt::Display for ForgeryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCounts {
    pub splice: usize,
    pub copy_move: usize,
    pub removal: usize,
    pub authentic: usize,
}

impl Default for SynthCounts {
    fn default() -> Self {
        Self { splice: 86, copy_move: 85, removal: 85, authentic: 0 }
    }
}

impl SynthCounts {
    pub fn total(&self) -> usize {
        self.splice + self.copy_move + self.removal + self.authentic
    }

    /// Kinds in index order.
    pub fn schedule(&self) -> Vec<ForgeryKind> {
        use ForgeryKind::*;
        [(Splice, self.splice), (CopyMove, self.copy_move), (Removal, self.removal), (Authentic, self.authentic)]
            .into_iter()
            .flat_map(|(k, n)| std::iter::repeat_n(k, n))
            .collect()
    }
}

/// Seam-disguising operations applied to the whole image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostOps {
    pub blur_prob: f64,
    pub blur_sigma: [f32; 2],
    pub jpeg_prob: f64,
    pub jpeg_quality: [u8; 2],
    /// Upper bound of the global additive noise, in 8-bit units.
    pub noise_sigma: f64,
}

impl Default for PostOps {
    fn default() -> Self {
        Self { blur_prob: 0.3, blur_sigma: [0.3, 0.6], jpeg_prob: 0.5, jpeg_quality: [90, 100], noise_sigma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: u32,
    pub area_range: [f64; 2],
    pub counts: SynthCounts,
    pub post: PostOps,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            area_range: [0.02, 0.2],
            counts: SynthCounts::default(),
            post: PostOps::default(),
            test_fraction: 0.25,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [lo, hi] = self.area_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("area_range {lo}..{hi} must satisfy 0 < lo <= hi < 1"));
        }
        if self.counts.total() == 0 {
            return bad("all sample counts are zero".into());
        }
        if self.image_size < 16 {
            return bad(format!("image_size {} is below 16", self.image_size));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} outside [0, 1)", self.test_fraction));
        }
        let p = &self.post;
        if !(0.0..=1.0).contains(&p.blur_prob) || !(0.0..=1.0).contains(&p.jpeg_prob) {
            return bad("post-op probabilities must lie in [0, 1]".into());
        }
        if !(p.blur_sigma[0] > 0.0 && p.blur_sigma[0] <= p.blur_sigma[1]) {
            return bad("blur_sigma must be an increasing positive range".into());
        }
        if !(1 <= p.jpeg_quality[0] && p.jpeg_quality[0] <= p.jpeg_quality[1] && p.jpeg_quality[1] <= 100) {
            return bad("jpeg_quality must be an increasing range within 1..=100".into());
        }
        if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub kind: ForgeryKind,
    pub index: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ForgerySample {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub edge: BinaryMask,
    pub meta: SampleMeta,
}

impl From<ForgerySample> for super::Sample {
    fn from(s: ForgerySample) -> Self {
        Self { image: super::rgb_to_tensor(&s.image), mask: s.mask, edge: s.edge }
    }
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi { lo } else { rng.random_range(lo..hi) }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise in roughly [-1, 1].
fn value_noise(rng: &mut impl Rng, size: usize, base_cells: usize, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let mut amp = 1.0;
    let mut norm = 0.0;
    for o in 0..octaves {
        let cells = base_cells << o;
        let stride = cells + 1;
        let lattice: Vec<f64> = (0..stride * stride).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = cells as f64 / size as f64;
        for y in 0..size {
            let fy = y as f64 * scale;
            let (iy, ty) = (fy as usize, smooth(fy.fract()));
            for x in 0..size {
                let fx = x as f64 * scale;
                let (ix, tx) = (fx as usize, smooth(fx.fract()));
                let at = |i: usize, j: usize| lattice[j * stride + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                out[y * size + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        norm += amp;
        amp *= rng.random_range(0.4..0.65);
    }
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

fn add_noise(img: &mut Rgb32FImage, rng: &mut impl Rng, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    for v in img.iter_mut() {
        *v += n.sample(rng) as f32;
    }
}

/// A textured "camera" image: gradient plus value noise plus sensor noise.
fn background(rng: &mut impl Rng, size: u32, sensor_sigma: f64) -> Rgb32FImage {
    let s = size as usize;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let cells = rng.random_range(2..6);
    let lum = value_noise(rng, s, cells, 4);
    let tint: Vec<Vec<f64>> = (0..3).map(|_| value_noise(rng, s, 3, 2)).collect();
    let contrast = rng.random_range(0.08..0.3);
    let tint_amp = rng.random_range(0.02..0.08);
    let mut img = Rgb32FImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / size as f64 - 0.5, y as f64 / size as f64 - 0.5);
        let t = (u * dx + v * dy + 0.5).clamp(0.0, 1.0);
        let i = y as usize * s + x as usize;
        Rgb(std::array::from_fn(|c| {
            (c0[c] * (1.0 - t) + c1[c] * t + contrast * lum[i] + tint_amp * tint[c][i]) as f32
        }))
    });
    add_noise(&mut img, rng, sensor_sigma);
    img
}

fn rasterize_blob(size: u32, cx: f64, cy: f64, a: f64, b: f64, rot: f64, harmonics: &[(f64, f64)]) -> BinaryMask {
    let (c, s) = (rot.cos(), rot.sin());
    BinaryMask::from_fn(size as usize, size as usize, |x, y| {
        let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let (u, v) = ((px * c + py * s) / a, (-px * s + py * c) / b);
        let theta = v.atan2(u);
        let r = 1.0 + harmonics.iter().enumerate().map(|(k, (amp, ph))| amp * ((k + 2) as f64 * theta + ph).sin()).sum::<f64>();
        u * u + v * v <= r * r
    })
}

/// A perturbed ellipse whose area fraction falls inside `range`. Falls back
/// to an axis-aligned rectangle if repeated draws miss.
fn blob_mask(rng: &mut impl Rng, size: u32, range: [f64; 2]) -> BinaryMask {
    let n = (size as f64).powi(2);
    let in_range = |m: &BinaryMask| (range[0]..=range[1]).contains(&m.area_fraction());
    let target = uniform(rng, range);
    for _ in 0..24 {
        let aspect = rng.random_range(0.5f64..2.0).sqrt();
        let harmonics: Vec<(f64, f64)> =
            (0..3).map(|_| (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI))).collect();
        let mean_r2 = 1.0 + harmonics.iter().map(|(a, _)| a * a / 2.0).sum::<f64>();
        let r = (target * n / (PI * mean_r2)).sqrt();
        let (a, b) = (r * aspect, r / aspect);
        let reach = a.max(b) * 1.4;
        let lim = size as f64 - reach;
        if lim <= reach {
            break;
        }
        let (cx, cy) = (rng.random_range(reach..lim), rng.random_range(reach..lim));
        let rot = rng.random_range(0.0..PI);
        let m = rasterize_blob(size, cx, cy, a, b, rot, &harmonics);
        if in_range(&m) {
            return m;
        }
    }
    let side = (target * n).sqrt().round().clamp(1.0, size as f64) as usize;
    let (w, h) = (side, ((target * n / side as f64).round() as usize).clamp(1, size as usize));
    let x0 = rng.random_range(0..=size as usize - w);
    let y0 = rng.random_range(0..=size as usize - h);
    BinaryMask::from_fn(size as usize, size as usize, |x, y| (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y))
}

fn bilinear(img: &Rgb32FImage, x: f64, y: f64) -> [f32; 3] {
    let (w, h) = (img.width() as f64 - 1.0, img.height() as f64 - 1.0);
    let (x, y) = (x.clamp(0.0, w), y.clamp(0.0, h));
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w as u32), (y0 + 1).min(h as u32));
    let (tx, ty) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let p = |xx, yy| img.get_pixel(xx, yy).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    std::array::from_fn(|k| {
        let top = a[k] * (1.0 - tx) + b[k] * tx;
        let bot = c[k] * (1.0 - tx) + d[k] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

fn composite(host: &mut Rgb32FImage, mask: &BinaryMask, mut src: impl FnMut(u32, u32) -> [f32; 3]) {
    for (x, y, p) in host.enumerate_pixels_mut() {
        if mask.get(x as usize, y as usize) {
            p.0 = src(x, y);
        }
    }
}

fn centroid(mask: &BinaryMask) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    (sx / n.max(1.0), sy / n.max(1.0))
}

fn splice(rng: &mut impl Rng, host: &mut Rgb32FImage, mask: &BinaryMask, sigma: f64) {
    let factor = if rng.random_bool(0.5) { rng.random_range(0.25..0.5) } else { rng.random_range(2.0..3.0) };
    let donor = background(rng, host.width(), sigma * factor);
    composite(host, mask, |x, y| donor.get_pixel(x, y).0);
}

fn copy_move(rng: &mut impl Rng, host: &mut Rgb32FImage, mask: &BinaryMask) {
    let size = host.width() as f64;
    let scale = rng.random_range(0.85..1.15);
    let (cx, cy) = centroid(mask);
    // source centre far enough away that the regions rarely coincide
    let radius = (mask.count() as f64 / PI).sqrt();
    let (mut sx, mut sy) = (cx, cy);
    for _ in 0..16 {
        let ang = rng.random_range(0.0..2.0 * PI);
        let dist = rng.random_range(1.5 * radius..3.0 * radius + 8.0);
        let (tx, ty) = (cx + dist * ang.cos(), cy + dist * ang.sin());
        if (radius..size - radius).contains(&tx) && (radius..size - radius).contains(&ty) {
            (sx, sy) = (tx, ty);
            break;
        }
    }
    // keep the fractional offset away from integers so the copy is resampled
    let (ox, oy): (f64, f64) = (rng.random_range(0.25..0.75), rng.random_range(0.25..0.75));
    let src = host.clone();
    composite(host, mask, |x, y| {
        let u = sx.floor() + ox + (x as f64 - cx) / scale;
        let v = sy.floor() + oy + (y as f64 - cy) / scale;
        bilinear(&src, u, v)
    });
}

fn removal(rng: &mut impl Rng, host: &mut Rgb32FImage, mask: &BinaryMask) {
    let sigma = rng.random_range(6.0f32..12.0);
    let fill = imageops::blur(host, sigma);
    composite(host, mask, |x, y| fill.get_pixel(x, y).0);
}

fn jpeg_round_trip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    let mut buf = Vec::new();
    img.write_with_encoder(JpegEncoder::new_with_quality(&mut buf, quality))
        .map_err(|e| Error::Data(format!("jpeg encode: {e}")))?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| Error::Data(format!("jpeg decode: {e}")))?;
    Ok(decoded.to_rgb8())
}

fn quantize(img: &Rgb32FImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        Rgb(img.get_pixel(x, y).0.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Builds sample `index` from its own stream of the master seed.
pub fn generate_sample(cfg: &SynthConfig, kind: ForgeryKind, index: usize) -> Result<ForgerySample> {
    let mut rng = sample_rng(cfg.seed, index as u64);
    let size = cfg.image_size;
    let sigma = rng.random_range(1.5..6.0) / 255.0;
    let mut img = background(&mut rng, size, sigma);
    let mask = if kind == ForgeryKind::Authentic {
        BinaryMask::zeros(size as usize, size as usize)
    } else {
        blob_mask(&mut rng, size, cfg.area_range)
    };
    match kind {
        ForgeryKind::Splice => splice(&mut rng, &mut img, &mask, sigma),
        ForgeryKind::CopyMove => copy_move(&mut rng, &mut img, &mask),
        ForgeryKind::Removal => removal(&mut rng, &mut img, &mask),
        ForgeryKind::Authentic => {}
    }
    let post = &cfg.post;
    if rng.random_bool(post.blur_prob) {
        let s = uniform(&mut rng, post.blur_sigma.map(f64::from)) as f32;
        img = imageops::blur(&img, s);
    }
    let global = uniform(&mut rng, [0.0, post.noise_sigma]) / 255.0;
    add_noise(&mut img, &mut rng, global);
    let mut image = quantize(&img);
    if rng.random_bool(post.jpeg_prob) {
        let q = rng.random_range(post.jpeg_quality[0]..=post.jpeg_quality[1]);
        image = jpeg_round_trip(&image, q)?;
    }
    let edge = derive_edge_gt(&mask, DEFAULT_EDGE_WIDTH);
    Ok(ForgerySample { image, mask, edge, meta: SampleMeta { kind, index, seed: cfg.seed } })
}

/// Seeded train/test assignment with exactly `round(n * test_fraction)` test samples.
pub fn assign_splits(n: usize, test_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample_rng(seed, u64::MAX));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut splits = vec![Split::Train; n];
    for &i in &order[..n_test] {
        splits[i] = Split::Test;
    }
    splits
}

fn save_png(path: &Path, write: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    write(path).map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

/// Writes `images/`, `masks/` and `manifest.jsonl` under `out`.
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let kinds = cfg.counts.schedule();
    let splits = assign_splits(kinds.len(), cfg.test_fraction, cfg.seed);
    let mut records = Vec::with_capacity(kinds.len());
    for (i, (&kind, &split)) in kinds.iter().zip(&splits).enumerate() {
        let s = generate_sample(cfg, kind, i)?;
        let name = format!("{i:04}_{kind}.png");
        let (img_rel, mask_rel) = (PathBuf::from("images").join(&name), PathBuf::from("masks").join(&name));
        save_png(&out.join(&img_rel), |p| s.image.save_with_format(p, ImageFormat::Png))?;
        save_png(&out.join(&mask_rel), |p| s.mask.to_gray().save_with_format(p, ImageFormat::Png))?;
        records.push(Record { image_path: img_rel, mask_path: mask_rel, split, source: kind.to_string() });
    }
    let manifest = Manifest { root: out.to_path_buf(), records };
    manifest.write(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// In-memory decode helper for tests and diagnostics.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("png encode to memory");
    buf.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dilate, erode, load_manifest};

    fn small(counts: SynthCounts) -> SynthConfig {
        SynthConfig { image_size: 64, counts, ..SynthConfig::default() }
    }

    fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["images", "masks"] {
            let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            for p in names {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
        out.push(("manifest.jsonl".into(), fs::read(dir.join("manifest.jsonl")).unwrap()));
        out
    }

    #[test]
    fn same_seed_gives_identical_tree() {
        let cfg = small(SynthCounts { splice: 2, copy_move: 2, removal: 2, authentic: 1 });
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic(&cfg, a.path()).unwrap();
        generate_synthetic(&cfg, b.path()).unwrap();
        assert_eq!(tree(a.path()), tree(b.path()));
        let m = load_manifest(&a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m.records.len(), 7);
    }

    #[test]
    fn distinct_seeds_differ() {
        let cfg = small(SynthCounts { splice: 1, copy_move: 0, removal: 0, authentic: 0 });
        let a = generate_sample(&cfg, ForgeryKind::Splice, 0).unwrap();
        let b = generate_sample(&SynthConfig { seed: 43, ..cfg }, ForgeryKind::Splice, 0).unwrap();
        assert_ne!(encode_png(&a.image), encode_png(&b.image));
    }

    #[test]
    fn splice_areas_in_range() {
        let cfg = SynthConfig { counts: SynthCounts { splice: 10, copy_move: 0, removal: 0, authentic: 0 }, ..Default::default() };
        for i in 0..10 {
            let s = generate_sample(&cfg, ForgeryKind::Splice, i).unwrap();
            let a = s.mask.area_fraction();
            assert!((0.02..=0.2).contains(&a), "sample {i}: area {a}");
        }
    }

    #[test]
    fn samples_satisfy_edge_invariants() {
        let cfg = small(SynthCounts::default());
        for (i, kind) in [ForgeryKind::Splice, ForgeryKind::CopyMove, ForgeryKind::Removal, ForgeryKind::Authentic]
            .into_iter()
            .enumerate()
        {
            let s = generate_sample(&cfg, kind, i).unwrap();
            assert_eq!(s.edge.is_empty(), s.mask.is_empty());
            // edge within the band around the boundary
            let band = derive_edge_gt(&s.mask, DEFAULT_EDGE_WIDTH);
            let near = dilate(&s.mask, DEFAULT_EDGE_WIDTH);
            let core = erode(&s.mask, DEFAULT_EDGE_WIDTH);
            for k in 0..s.edge.data().len() {
                assert!(s.edge.data()[k] <= band.data()[k]);
                assert!(s.edge.data()[k] <= near.data()[k] && core.data()[k] <= s.mask.data()[k]);
            }
        }
    }

    #[test]
    fn forged_region_changes_pixels() {
        let cfg = SynthConfig { post: PostOps { blur_prob: 0.0, jpeg_prob: 0.0, noise_sigma: 0.0, ..Default::default() }, ..Default::default() };
        for kind in [ForgeryKind::Splice, ForgeryKind::CopyMove, ForgeryKind::Removal] {
            let forged = generate_sample(&cfg, kind, 3).unwrap();
            let clean = generate_sample(&cfg, ForgeryKind::Authentic, 3).unwrap();
            let mut inside = 0.0;
            for (x, y, p) in forged.image.enumerate_pixels() {
                if forged.mask.get(x as usize, y as usize) {
                    inside += (0..3).map(|c| p[c].abs_diff(clean.image.get_pixel(x, y)[c]) as f64).sum::<f64>();
                }
            }
            assert!(inside > 0.0, "{kind}");
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = small(SynthCounts { splice: 0, copy_move: 0, removal: 0, authentic: 0 });
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(generate_synthetic(&cfg, dir.path()), Err(Error::Config(_))));
        let bad = SynthConfig { area_range: [0.0, 0.2], ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_split_sizes() {
        let splits = assign_splits(256, 0.25, 42);
        assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 64);
        assert_eq!(splits, assign_splits(256, 0.25, 42));
    }
}
