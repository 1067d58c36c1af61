//! Synthetic scene generation by cut-and-paste composition.
//!
//! Foreground cut-outs (RGBA, alpha = instance mask) are resized, rotated and
//! re-lit, then pasted onto background patches in placement order. Later
//! placements cover earlier ones, and every instance's mask is tracked
//! directly, so annotations are pixel-exact without colour-coded mask images.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, Rgb, RgbImage, RgbaImage};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco_io::{
    annotation_from_mask, write_coco, CocoAnnotation, CocoCategory, CocoDataset, CocoImage,
};
use crate::error::{Error, Result};
use crate::geom::InstanceMask;
use crate::imageio::write_png;

pub const DEFAULT_CATEGORY: &str = "dead_tree";
pub const ANNOTATION_FILE: &str = "annotations.json";
pub const IMAGE_DIR: &str = "images";

/// A cut-out object, tight-cropped to its alpha channel.
#[derive(Debug, Clone)]
pub struct ForegroundInstance {
    pub image: RgbaImage,
    pub category_id: u64,
    pub source_id: String,
}

impl ForegroundInstance {
    /// Crop `image` to its non-transparent extent. Fails if alpha is empty.
    pub fn new(image: RgbaImage, category_id: u64, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        let mask = InstanceMask::from_fn(image.width(), image.height(), |x, y| {
            image.get_pixel(x, y)[3] >= 128
        });
        let Some(b) = mask.tight_bbox() else {
            return Err(Error::InvalidRecipe(format!(
                "foreground {source_id} has an empty alpha channel"
            )));
        };
        let image =
            imageops::crop_imm(&image, b.x as u32, b.y as u32, b.w as u32, b.h as u32).to_image();
        Ok(Self {
            image,
            category_id,
            source_id,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForegroundLibrary {
    pub instances: Vec<ForegroundInstance>,
    pub categories: Vec<CocoCategory>,
}

impl ForegroundLibrary {
    /// Load RGBA PNGs. Subdirectories of `dir` become categories (ids from 1
    /// in name order); PNGs directly inside `dir` are filed under a
    /// `dead_tree` category when there are no subdirectories.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let subdirs: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .collect();
        let groups: Vec<(String, PathBuf)> = if subdirs.is_empty() {
            vec![(DEFAULT_CATEGORY.to_string(), dir.to_path_buf())]
        } else {
            subdirs
                .into_iter()
                .map(|p| (file_stem(&p), p))
                .collect()
        };
        let mut lib = ForegroundLibrary::default();
        for (i, (name, path)) in groups.into_iter().enumerate() {
            let id = i as u64 + 1;
            lib.categories.push(CocoCategory { id, name });
            for file in png_files(&path)? {
                let img = image::open(&file)
                    .map_err(|e| Error::image(&file, e))?
                    .to_rgba8();
                lib.instances
                    .push(ForegroundInstance::new(img, id, file_stem(&file))?);
            }
        }
        if lib.instances.is_empty() {
            return Err(Error::EmptyLibrary("foreground"));
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone)]
pub struct Background {
    pub image: RgbImage,
    pub source_id: String,
}

pub fn load_backgrounds(dir: impl AsRef<Path>) -> Result<Vec<Background>> {
    let mut out = Vec::new();
    for file in png_files(dir.as_ref())? {
        let image = image::open(&file)
            .map_err(|e| Error::image(&file, e))?
            .to_rgb8();
        out.push(Background {
            image,
            source_id: file_stem(&file),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyLibrary("background"));
    }
    Ok(out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect())
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One pasted foreground. `(x, y)` is the top-left of the transformed,
/// tight-cropped cut-out in background pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub foreground: usize,
    pub scale: f64,
    pub rotation_deg: f64,
    pub lightness: f64,
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub background: usize,
    pub placements: Vec<Placement>,
    pub seed: u64,
}

/// A foreground after scale, rotation and lightness, cropped to its mask.
#[derive(Debug, Clone)]
pub struct TransformedForeground {
    pub rgb: RgbImage,
    pub mask: InstanceMask,
    pub category_id: u64,
}

fn snap_unit(v: f64) -> f64 {
    for t in [-1.0, 0.0, 1.0] {
        if (v - t).abs() < 1e-12 {
            return t;
        }
    }
    v
}

/// Resample with bilinear interpolation about the image center. Colour is
/// interpolated alpha-weighted; the mask is the interpolated alpha ≥ 0.5.
/// Positive angles rotate clockwise on screen.
pub fn transform_foreground(
    fg: &ForegroundInstance,
    scale: f64,
    rotation_deg: f64,
    lightness: f64,
) -> TransformedForeground {
    let src = &fg.image;
    let (sw, sh) = (src.width() as f64, src.height() as f64);
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let (sin, cos) = (snap_unit(sin), snap_unit(cos));
    let (w_s, h_s) = (sw * scale, sh * scale);
    let out_w = ((w_s * cos.abs() + h_s * sin.abs()) - 1e-9).ceil().max(1.0) as u32;
    let out_h = ((w_s * sin.abs() + h_s * cos.abs()) - 1e-9).ceil().max(1.0) as u32;
    let (cox, coy) = (out_w as f64 / 2.0, out_h as f64 / 2.0);
    let (csx, csy) = (sw / 2.0, sh / 2.0);

    let texel = |x: i64, y: i64| -> [f64; 4] {
        if x < 0 || y < 0 || x >= src.width() as i64 || y >= src.height() as i64 {
            return [0.0; 4];
        }
        let p = src.get_pixel(x as u32, y as u32).0;
        [p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64]
    };

    let mut rgb = RgbImage::new(out_w, out_h);
    let mut mask = InstanceMask::new(out_w, out_h);
    for v in 0..out_h {
        for u in 0..out_w {
            let dx = u as f64 + 0.5 - cox;
            let dy = v as f64 + 0.5 - coy;
            let fx = (cos * dx + sin * dy) / scale + csx - 0.5;
            let fy = (-sin * dx + cos * dy) / scale + csy - 0.5;
            let (x0, y0) = (fx.floor(), fy.floor());
            let (tx, ty) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut acc = [0.0f64; 4];
            for (dxi, dyi, wgt) in [
                (0, 0, (1.0 - tx) * (1.0 - ty)),
                (1, 0, tx * (1.0 - ty)),
                (0, 1, (1.0 - tx) * ty),
                (1, 1, tx * ty),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let t = texel(x0 + dxi, y0 + dyi);
                let wa = wgt * t[3];
                acc[0] += wa * t[0];
                acc[1] += wa * t[1];
                acc[2] += wa * t[2];
                acc[3] += wa;
            }
            if acc[3] >= 127.5 {
                mask.set(u, v, true);
                let px = [0, 1, 2].map(|c| {
                    (acc[c] / acc[3] * lightness).round().clamp(0.0, 255.0) as u8
                });
                rgb.put_pixel(u, v, Rgb(px));
            }
        }
    }

    match mask.tight_bbox() {
        Some(b) if (b.w as u32, b.h as u32) != (out_w, out_h) => {
            let (bx, by, bw, bh) = (b.x as u32, b.y as u32, b.w as u32, b.h as u32);
            let rgb = imageops::crop_imm(&rgb, bx, by, bw, bh).to_image();
            let mask = InstanceMask::from_fn(bw, bh, |x, y| mask.get(x + bx, y + by));
            TransformedForeground {
                rgb,
                mask,
                category_id: fg.category_id,
            }
        }
        _ => TransformedForeground {
            rgb,
            mask,
            category_id: fg.category_id,
        },
    }
}

/// A visible object in a scene: a full-frame mask of the pixels it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub category_id: u64,
    /// Index of the placement that produced this instance.
    pub placement: usize,
    pub mask: InstanceMask,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: RgbImage,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn masks(&self) -> Vec<&InstanceMask> {
        self.instances.iter().map(|i| &i.mask).collect()
    }

    /// One RLE annotation per instance, ids counting up from `first_id`.
    pub fn annotations(&self, image_id: u64, first_id: u64) -> Vec<CocoAnnotation> {
        self.instances
            .iter()
            .enumerate()
            .map(|(k, inst)| annotation_from_mask(first_id + k as u64, image_id, inst.category_id, &inst.mask))
            .collect()
    }
}

fn validate_placement(i: usize, p: &Placement, n_fg: usize) -> Result<()> {
    if p.foreground >= n_fg {
        return Err(Error::UnknownId {
            kind: "foreground",
            id: p.foreground,
        });
    }
    if !(p.scale > 0.0 && p.scale.is_finite()) {
        return Err(Error::InvalidRecipe(format!(
            "placement {i}: scale must be positive, got {}",
            p.scale
        )));
    }
    if !(p.lightness >= 0.0 && p.lightness.is_finite()) || !p.rotation_deg.is_finite() {
        return Err(Error::InvalidRecipe(format!(
            "placement {i}: lightness and rotation must be finite, lightness non-negative"
        )));
    }
    Ok(())
}

/// Render `recipe`. Each returned instance owns exactly the pixels where it is
/// topmost; instances that end up fully covered are omitted.
pub fn compose(
    recipe: &SceneRecipe,
    foregrounds: &[ForegroundInstance],
    backgrounds: &[Background],
) -> Result<Scene> {
    let bg = backgrounds.get(recipe.background).ok_or(Error::UnknownId {
        kind: "background",
        id: recipe.background,
    })?;
    let mut pasted = Vec::with_capacity(recipe.placements.len());
    for (i, p) in recipe.placements.iter().enumerate() {
        validate_placement(i, p, foregrounds.len())?;
        let tf = transform_foreground(&foregrounds[p.foreground], p.scale, p.rotation_deg, p.lightness);
        pasted.push((tf, p.x, p.y));
    }
    composite(&bg.image, &pasted)
}

fn lands_inside(tf: &TransformedForeground, x: i64, y: i64, bw: u32, bh: u32) -> bool {
    let (mw, mh) = (tf.mask.width() as i64, tf.mask.height() as i64);
    if x + mw <= 0 || y + mh <= 0 || x >= bw as i64 || y >= bh as i64 {
        return false;
    }
    let (x0, x1) = ((-x).max(0), (bw as i64 - x).min(mw));
    let (y0, y1) = ((-y).max(0), (bh as i64 - y).min(mh));
    (y0..y1).any(|my| (x0..x1).any(|mx| tf.mask.get(mx as u32, my as u32)))
}

fn composite(background: &RgbImage, pasted: &[(TransformedForeground, i64, i64)]) -> Result<Scene> {
    let (bw, bh) = background.dimensions();
    let mut image = background.clone();
    // 0 = background, k + 1 = placement k
    let mut owner = vec![0u32; bw as usize * bh as usize];
    for (k, (tf, x, y)) in pasted.iter().enumerate() {
        if !lands_inside(tf, *x, *y, bw, bh) {
            return Err(Error::PlacementOutside { index: k });
        }
        for my in 0..tf.mask.height() {
            let by = y + my as i64;
            if by < 0 || by >= bh as i64 {
                continue;
            }
            for mx in 0..tf.mask.width() {
                let bx = x + mx as i64;
                if bx < 0 || bx >= bw as i64 || !tf.mask.get(mx, my) {
                    continue;
                }
                image.put_pixel(bx as u32, by as u32, *tf.rgb.get_pixel(mx, my));
                owner[by as usize * bw as usize + bx as usize] = k as u32 + 1;
            }
        }
    }
    let mut masks: Vec<InstanceMask> = pasted.iter().map(|_| InstanceMask::new(bw, bh)).collect();
    for (i, &o) in owner.iter().enumerate() {
        if o != 0 {
            masks[o as usize - 1].bits_mut()[i] = true;
        }
    }
    let instances = masks
        .into_iter()
        .zip(pasted)
        .enumerate()
        .filter(|(_, (m, _))| !m.is_empty())
        .map(|(k, (mask, (tf, _, _)))| Instance {
            category_id: tf.category_id,
            placement: k,
            mask,
        })
        .collect();
    Ok(Scene { image, instances })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionPolicy {
    /// Annotate the visible region as-is, connected or not.
    #[default]
    Keep,
    /// Discard instances whose visible region has two or more components.
    DropFragmented,
    /// One instance per visible component of at least `min_area` pixels.
    SplitComponents,
}

impl std::str::FromStr for OcclusionPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "keep" => Ok(Self::Keep),
            "drop" | "drop_fragmented" => Ok(Self::DropFragmented),
            "split" | "split_components" => Ok(Self::SplitComponents),
            other => Err(format!("unknown occlusion policy {other:?}")),
        }
    }
}

/// Filter instances by visibility. Connectivity is 8-neighbour. Under every
/// policy an instance (or component) smaller than `min_area` is dropped.
pub fn occlusion_policy(instances: Vec<Instance>, policy: OcclusionPolicy, min_area: u64) -> Vec<Instance> {
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        match policy {
            OcclusionPolicy::Keep => {
                if inst.mask.area() >= min_area.max(1) {
                    out.push(inst);
                }
            }
            OcclusionPolicy::DropFragmented => {
                if inst.mask.area() >= min_area.max(1) && inst.mask.component_count() == 1 {
                    out.push(inst);
                }
            }
            OcclusionPolicy::SplitComponents => {
                for mask in inst.mask.components() {
                    if mask.area() >= min_area.max(1) {
                        out.push(Instance {
                            category_id: inst.category_id,
                            placement: inst.placement,
                            mask,
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Candidate clockwise rotations in degrees; multiples of 90.
    pub rotations: Vec<u32>,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub hflip_prob: f64,
    pub corner_clip_prob: f64,
    /// Largest clipped corner as a fraction of each image side.
    pub corner_clip_max_frac: f64,
    /// Instances shrinking below this after clipping are dropped.
    pub min_area: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotations: vec![0, 90, 180, 270],
            brightness: (0.9, 1.1),
            contrast: (0.9, 1.1),
            hflip_prob: 0.5,
            corner_clip_prob: 0.5,
            corner_clip_max_frac: 0.1,
            min_area: DEFAULT_MIN_AREA,
        }
    }
}

impl AugmentConfig {
    /// Leaves every input unchanged.
    pub fn identity() -> Self {
        Self {
            rotations: vec![0],
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            hflip_prob: 0.0,
            corner_clip_prob: 0.0,
            corner_clip_max_frac: 0.1,
            min_area: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecipe(m));
        if self.rotations.is_empty() || self.rotations.iter().any(|r| r % 90 != 0) {
            return bad(format!("rotations must be non-empty multiples of 90: {:?}", self.rotations));
        }
        for (name, (lo, hi)) in [("brightness", self.brightness), ("contrast", self.contrast)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
            }
        }
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("corner_clip_prob", self.corner_clip_prob),
            ("corner_clip_max_frac", self.corner_clip_max_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// The transforms drawn for one call of [`augment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub quarter_turns: u32,
    pub hflip: bool,
    /// `(corner index 0..4 clockwise from top-left, width, height)`.
    pub corner_clip: Option<(u8, u32, u32)>,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, width: u32, height: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
        let hflip = rng.random_bool(cfg.hflip_prob);
        let clip = rng.random_bool(cfg.corner_clip_prob);
        let corner: u8 = rng.random_range(0..4);
        let max_w = ((width as f64 * cfg.corner_clip_max_frac).floor() as u32).max(1);
        let max_h = ((height as f64 * cfg.corner_clip_max_frac).floor() as u32).max(1);
        let cw = rng.random_range(1..=max_w);
        let ch = rng.random_range(1..=max_h);
        let brightness = rng.random_range(cfg.brightness.0..=cfg.brightness.1);
        let contrast = rng.random_range(cfg.contrast.0..=cfg.contrast.1);
        Self {
            quarter_turns: (rot / 90) % 4,
            hflip,
            corner_clip: clip.then_some((corner, cw, ch)),
            brightness,
            contrast,
        }
    }
}

/// Quarter turn clockwise: `(x, y) -> (h - 1 - y, x)`.
pub fn rotate_mask90(m: &InstanceMask) -> InstanceMask {
    let (w, h) = (m.width(), m.height());
    InstanceMask::from_fn(h, w, |nx, ny| m.get(ny, h - 1 - nx))
}

pub fn flip_mask_horizontal(m: &InstanceMask) -> InstanceMask {
    let w = m.width();
    InstanceMask::from_fn(w, m.height(), |x, y| m.get(w - 1 - x, y))
}

/// Apply a seeded random augmentation. Geometric transforms act on image and
/// masks alike; brightness and contrast touch the image only.
pub fn augment(scene: Scene, cfg: &AugmentConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let draw = AugmentDraw::sample(cfg, scene.image.width(), scene.image.height(), seed);
    Ok(apply_augment(scene, &draw, cfg.min_area))
}

pub fn apply_augment(scene: Scene, draw: &AugmentDraw, min_area: u64) -> Scene {
    let Scene {
        mut image,
        mut instances,
    } = scene;
    for _ in 0..draw.quarter_turns {
        image = imageops::rotate90(&image);
        for inst in &mut instances {
            inst.mask = rotate_mask90(&inst.mask);
        }
    }
    if draw.hflip {
        imageops::flip_horizontal_in_place(&mut image);
        for inst in &mut instances {
            inst.mask = flip_mask_horizontal(&inst.mask);
        }
    }
    if let Some((corner, cw, ch)) = draw.corner_clip {
        let (w, h) = image.dimensions();
        let (cw, ch) = (cw.min(w), ch.min(h));
        let x0 = if corner == 1 || corner == 2 { w - cw } else { 0 };
        let y0 = if corner >= 2 { h - ch } else { 0 };
        for y in y0..y0 + ch {
            for x in x0..x0 + cw {
                image.put_pixel(x, y, Rgb([0, 0, 0]));
                for inst in &mut instances {
                    inst.mask.set(x, y, false);
                }
            }
        }
        instances.retain(|i| !i.mask.is_empty() && i.mask.area() >= min_area);
    }
    adjust_photometric(&mut image, draw.brightness, draw.contrast);
    Scene { image, instances }
}

/// Scale intensities by `brightness`, then stretch about the mean by
/// `contrast`.
pub fn adjust_photometric(image: &mut RgbImage, brightness: f64, contrast: f64) {
    if brightness == 1.0 && contrast == 1.0 {
        return;
    }
    let raw = image.as_raw();
    let mean = if raw.is_empty() {
        0.0
    } else {
        raw.iter().map(|&v| v as f64).sum::<f64>() / raw.len() as f64
    };
    for v in image.iter_mut() {
        let out = brightness * ((*v as f64 - mean) * contrast + mean);
        *v = out.round().clamp(0.0, 255.0) as u8;
    }
}

pub const DEFAULT_MIN_AREA: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Inclusive range of placements per scene.
    pub placements: (u32, u32),
    pub scale: (f64, f64),
    /// Rotation range in degrees for composition (any angle).
    pub rotation: (f64, f64),
    pub lightness: (f64, f64),
    pub occlusion: OcclusionPolicy,
    pub min_area: u64,
    /// Run [`augment`] on every scene after composition.
    pub augment: Option<AugmentConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            placements: (1, 8),
            scale: (0.5, 1.5),
            rotation: (0.0, 360.0),
            lightness: (0.8, 1.2),
            occlusion: OcclusionPolicy::Keep,
            min_area: DEFAULT_MIN_AREA,
            augment: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecipe(m));
        if self.placements.0 > self.placements.1 {
            return bad(format!("placement range {:?} is empty", self.placements));
        }
        if !(self.scale.0 > 0.0 && self.scale.0 <= self.scale.1) {
            return bad(format!("scale range {:?} must be positive and ordered", self.scale));
        }
        if !(self.lightness.0 >= 0.0 && self.lightness.0 <= self.lightness.1) {
            return bad(format!("lightness range {:?} must be non-negative and ordered", self.lightness));
        }
        if !(self.rotation.0 <= self.rotation.1) {
            return bad(format!("rotation range {:?} is empty", self.rotation));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Per-scene seed: the `index`-th output of a SplitMix64 stream seeded with
/// `master`.
pub fn scene_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draw a random recipe and render it. Positions let a cut-out overhang the
/// border by at most a quarter of its size.
pub fn random_scene(
    foregrounds: &[ForegroundInstance],
    backgrounds: &[Background],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(SceneRecipe, Scene)> {
    if foregrounds.is_empty() {
        return Err(Error::EmptyLibrary("foreground"));
    }
    if backgrounds.is_empty() {
        return Err(Error::EmptyLibrary("background"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = rng.random_range(0..backgrounds.len());
    let (bw, bh) = backgrounds[background].image.dimensions();
    let n = rng.random_range(cfg.placements.0..=cfg.placements.1);
    let mut placements = Vec::with_capacity(n as usize);
    let mut pasted = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let foreground = rng.random_range(0..foregrounds.len());
        let scale = sample_range(&mut rng, cfg.scale);
        let rotation_deg = sample_range(&mut rng, cfg.rotation);
        let lightness = sample_range(&mut rng, cfg.lightness);
        let tf = transform_foreground(&foregrounds[foreground], scale, rotation_deg, lightness);
        if tf.mask.is_empty() {
            continue;
        }
        let (tw, th) = (tf.mask.width() as i64, tf.mask.height() as i64);
        let axis = |rng: &mut ChaCha8Rng, size: i64, extent: u32| -> i64 {
            let lo = -(size / 4);
            let hi = extent as i64 - size + size / 4;
            if hi <= lo {
                (extent as i64 - size) / 2
            } else {
                rng.random_range(lo..=hi)
            }
        };
        let mut pos = (axis(&mut rng, tw, bw), axis(&mut rng, th, bh));
        if !lands_inside(&tf, pos.0, pos.1, bw, bh) {
            pos = ((bw as i64 - tw) / 2, (bh as i64 - th) / 2);
        }
        placements.push(Placement {
            foreground,
            scale,
            rotation_deg,
            lightness,
            x: pos.0,
            y: pos.1,
        });
        pasted.push((tf, pos.0, pos.1));
    }
    let scene = composite(&backgrounds[background].image, &pasted)?;
    Ok((
        SceneRecipe {
            background,
            placements,
            seed,
        },
        scene,
    ))
}

/// Compose, optionally augment, then filter one scene from its seed. The
/// occlusion policy runs last because corner clipping can fragment a mask.
pub fn generate_scene(
    foregrounds: &[ForegroundInstance],
    backgrounds: &[Background],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Scene> {
    let (_, scene) = random_scene(foregrounds, backgrounds, cfg, seed)?;
    let scene = match &cfg.augment {
        Some(a) => augment(scene, a, scene_seed(seed, u64::MAX - 1))?,
        None => scene,
    };
    Ok(Scene {
        instances: occlusion_policy(scene.instances, cfg.occlusion, cfg.min_area),
        image: scene.image,
    })
}

/// Render `n_images` scenes into `out_dir/images/` and write
/// `out_dir/annotations.json`. Scene `i` uses [`scene_seed`]`(seed, i)`, so
/// output does not depend on thread scheduling.
pub fn generate_dataset(
    n_images: usize,
    library: &ForegroundLibrary,
    backgrounds: &[Background],
    cfg: &SynthConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<CocoDataset> {
    cfg.validate()?;
    if library.instances.is_empty() {
        return Err(Error::EmptyLibrary("foreground"));
    }
    if backgrounds.is_empty() {
        return Err(Error::EmptyLibrary("background"));
    }
    let out_dir = out_dir.as_ref();
    let img_dir = out_dir.join(IMAGE_DIR);
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let per_image: Vec<(CocoImage, Vec<CocoAnnotation>)> = (0..n_images)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&library.instances, backgrounds, cfg, scene_seed(seed, i as u64))?;
            let file_name = format!("{IMAGE_DIR}/synth_{i:06}.png");
            let image_id = i as u64 + 1;
            let (width, height) = scene.image.dimensions();
            let anns = scene.annotations(image_id, 1);
            write_png(out_dir.join(&file_name), &DynamicImage::ImageRgb8(scene.image))?;
            Ok((
                CocoImage {
                    id: image_id,
                    file_name,
                    width,
                    height,
                },
                anns,
            ))
        })
        .collect::<Result<_>>()?;

    let used: BTreeSet<u64> = library.instances.iter().map(|f| f.category_id).collect();
    let mut ds = CocoDataset {
        categories: library
            .categories
            .iter()
            .filter(|c| used.contains(&c.id))
            .cloned()
            .collect(),
        ..Default::default()
    };
    let mut next_id = 1;
    for (img, anns) in per_image {
        ds.images.push(img);
        for mut a in anns {
            a.id = next_id;
            next_id += 1;
            ds.annotations.push(a);
        }
    }
    write_coco(&ds, out_dir.join(ANNOTATION_FILE))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BBox;
    use image::Rgba;

    fn square_fg(size: u32, color: [u8; 3]) -> ForegroundInstance {
        let img = RgbaImage::from_pixel(size, size, Rgba([color[0], color[1], color[2], 255]));
        ForegroundInstance::new(img, 1, "sq").unwrap()
    }

    fn bg(w: u32, h: u32) -> Background {
        Background {
            image: RgbImage::from_pixel(w, h, Rgb([10, 20, 30])),
            source_id: "bg".into(),
        }
    }

    fn place(fg: usize, x: i64, y: i64) -> Placement {
        Placement {
            foreground: fg,
            scale: 1.0,
            rotation_deg: 0.0,
            lightness: 1.0,
            x,
            y,
        }
    }

    #[test]
    fn foreground_is_tight_cropped() {
        let mut img = RgbaImage::new(10, 10);
        img.put_pixel(3, 4, Rgba([1, 2, 3, 255]));
        img.put_pixel(5, 6, Rgba([1, 2, 3, 200]));
        let fg = ForegroundInstance::new(img, 1, "x").unwrap();
        assert_eq!(fg.image.dimensions(), (3, 3));
        assert!(ForegroundInstance::new(RgbaImage::new(4, 4), 1, "empty").is_err());
    }

    #[test]
    fn identity_transform_is_exact() {
        let mut img = RgbaImage::new(4, 3);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgba([x as u8 * 40, y as u8 * 70, 9, 255]);
        }
        let fg = ForegroundInstance::new(img.clone(), 1, "g").unwrap();
        let tf = transform_foreground(&fg, 1.0, 0.0, 1.0);
        assert_eq!(tf.rgb.dimensions(), (4, 3));
        for (x, y, p) in tf.rgb.enumerate_pixels() {
            let q = img.get_pixel(x, y);
            assert_eq!(p.0, [q[0], q[1], q[2]]);
        }
        assert_eq!(tf.mask.area(), 12);
    }

    #[test]
    fn quarter_turn_transform_swaps_extent() {
        let img = RgbaImage::from_pixel(6, 2, Rgba([5, 5, 5, 255]));
        let fg = ForegroundInstance::new(img, 1, "r").unwrap();
        let tf = transform_foreground(&fg, 1.0, 90.0, 1.0);
        assert_eq!(tf.mask.width(), 2);
        assert_eq!(tf.mask.height(), 6);
        assert_eq!(tf.mask.area(), 12);
    }

    #[test]
    fn compose_zero_placements() {
        let recipe = SceneRecipe {
            background: 0,
            placements: vec![],
            seed: 0,
        };
        let scene = compose(&recipe, &[], &[bg(8, 8)]).unwrap();
        assert_eq!(scene.image, bg(8, 8).image);
        assert!(scene.instances.is_empty());
    }

    #[test]
    fn compose_single_square() {
        let recipe = SceneRecipe {
            background: 0,
            placements: vec![place(0, 5, 5)],
            seed: 0,
        };
        let scene = compose(&recipe, &[square_fg(10, [200, 0, 0])], &[bg(32, 32)]).unwrap();
        let anns = scene.annotations(1, 1);
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].bbox, BBox::new(5.0, 5.0, 10.0, 10.0));
        assert_eq!(anns[0].area, 100.0);
        assert_eq!(scene.image.get_pixel(5, 5).0, [200, 0, 0]);
        assert_eq!(scene.image.get_pixel(4, 5).0, [10, 20, 30]);
    }

    #[test]
    fn compose_errors() {
        let fgs = [square_fg(4, [1, 1, 1])];
        let bgs = [bg(8, 8)];
        let r = |p: Placement, b: usize| SceneRecipe {
            background: b,
            placements: vec![p],
            seed: 0,
        };
        assert!(matches!(
            compose(&r(place(0, 1, 1), 3), &fgs, &bgs),
            Err(Error::UnknownId { kind: "background", .. })
        ));
        assert!(matches!(
            compose(&r(place(2, 1, 1), 0), &fgs, &bgs),
            Err(Error::UnknownId { kind: "foreground", .. })
        ));
        assert!(matches!(
            compose(&r(place(0, 8, 0), 0), &fgs, &bgs),
            Err(Error::PlacementOutside { index: 0 })
        ));
        assert!(matches!(
            compose(&r(place(0, -4, 0), 0), &fgs, &bgs),
            Err(Error::PlacementOutside { index: 0 })
        ));
        let mut p = place(0, 0, 0);
        p.scale = 0.0;
        assert!(matches!(compose(&r(p, 0), &fgs, &bgs), Err(Error::InvalidRecipe(_))));
        // partially inside is fine
        compose(&r(place(0, -3, 6), 0), &fgs, &bgs).unwrap();
    }

    #[test]
    fn fully_covered_instance_is_omitted() {
        let recipe = SceneRecipe {
            background: 0,
            placements: vec![place(0, 2, 2), place(1, 0, 0)],
            seed: 0,
        };
        let scene =
            compose(&recipe, &[square_fg(3, [1, 1, 1]), square_fg(8, [2, 2, 2])], &[bg(10, 10)])
                .unwrap();
        assert_eq!(scene.instances.len(), 1);
        assert_eq!(scene.instances[0].placement, 1);
    }

    #[test]
    fn augment_identity_is_noop() {
        let recipe = SceneRecipe {
            background: 0,
            placements: vec![place(0, 1, 2)],
            seed: 0,
        };
        let scene = compose(&recipe, &[square_fg(3, [90, 60, 30])], &[bg(9, 7)]).unwrap();
        let out = augment(scene.clone(), &AugmentConfig::identity(), 17).unwrap();
        assert_eq!(out.image, scene.image);
        assert_eq!(out.instances, scene.instances);
    }

    #[test]
    fn rotation_of_box_in_square_image() {
        let img = RgbImage::new(10, 10);
        let mask = InstanceMask::from_rect(10, 10, 0, 0, 2, 4);
        let scene = Scene {
            image: img,
            instances: vec![Instance {
                category_id: 1,
                placement: 0,
                mask,
            }],
        };
        let draw = AugmentDraw {
            quarter_turns: 1,
            hflip: false,
            corner_clip: None,
            brightness: 1.0,
            contrast: 1.0,
        };
        let out = apply_augment(scene, &draw, 0);
        let m = &out.instances[0].mask;
        assert_eq!(m.tight_bbox(), Some(BBox::new(6.0, 0.0, 4.0, 2.0)));
        assert_eq!(m.area(), 8);
    }

    #[test]
    fn corner_clip_drops_small_instances() {
        let scene = Scene {
            image: RgbImage::from_pixel(20, 20, Rgb([100, 100, 100])),
            instances: vec![
                Instance {
                    category_id: 1,
                    placement: 0,
                    mask: InstanceMask::from_rect(20, 20, 0, 0, 2, 2),
                },
                Instance {
                    category_id: 1,
                    placement: 1,
                    mask: InstanceMask::from_rect(20, 20, 1, 0, 6, 6),
                },
            ],
        };
        let draw = AugmentDraw {
            quarter_turns: 0,
            hflip: false,
            corner_clip: Some((0, 2, 2)),
            brightness: 1.0,
            contrast: 1.0,
        };
        let out = apply_augment(scene, &draw, 5);
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.instances[0].mask.area(), 36 - 2);
        assert_eq!(out.image.get_pixel(1, 1).0, [0, 0, 0]);
        assert_eq!(out.image.get_pixel(2, 2).0, [100, 100, 100]);
    }

    #[test]
    fn photometric_stays_in_range() {
        let mut img = RgbImage::from_fn(4, 4, |x, y| Rgb([(x * 60) as u8, (y * 80) as u8, 255]));
        adjust_photometric(&mut img, 1.1, 1.1);
        assert_eq!(img.get_pixel(0, 0)[2], 255);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("drop".parse::<OcclusionPolicy>().unwrap(), OcclusionPolicy::DropFragmented);
        assert!("nope".parse::<OcclusionPolicy>().is_err());
    }

    #[test]
    fn scene_seeds_differ() {
        let s: BTreeSet<u64> = (0..1000).map(|i| scene_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
