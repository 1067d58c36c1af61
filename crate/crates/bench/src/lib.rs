//! Seeded inputs shared by the criterion benches.

use deadwood::eval::{Detection, GroundTruth};
use deadwood::synth::{Background, ForegroundInstance};
use deadwood::{BBox, InstanceMask};
use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` boxes inside an `extent`-sized square.
pub fn boxes(n: usize, extent: f64, seed: u64) -> Vec<BBox> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            BBox::new(
                r.random_range(0.0..extent),
                r.random_range(0.0..extent),
                r.random_range(8.0..120.0),
                r.random_range(8.0..120.0),
            )
        })
        .collect()
}

pub fn scored_boxes(n: usize, seed: u64) -> Vec<(BBox, f64)> {
    let mut r = rng(seed ^ 1);
    boxes(n, 800.0, seed).into_iter().map(|b| (b, r.random_range(0.0..1.0))).collect()
}

/// A few overlapping blobs, so runs are neither trivial nor pixel noise.
pub fn blob_mask(w: u32, h: u32, seed: u64) -> InstanceMask {
    let mut r = rng(seed);
    let blobs: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64), r.random_range(10.0..w as f64 / 4.0)))
        .collect();
    InstanceMask::from_fn(w, h, |x, y| {
        blobs.iter().any(|&(cx, cy, rad)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < rad * rad)
    })
}

/// `(score, is_tp)` pairs with about `tp_rate` true positives.
pub fn scored_flags(n: usize, tp_rate: f64, seed: u64) -> Vec<(f64, bool)> {
    let mut r = rng(seed);
    (0..n).map(|_| (r.random_range(0.0..1.0), r.random_bool(tp_rate))).collect()
}

/// Ground truth over `images` images and detections that jitter most of it.
pub fn eval_fixture(images: u64, per_image: usize, seed: u64) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut r = rng(seed);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image_id in 1..=images {
        for (k, b) in boxes(per_image, 700.0, seed ^ image_id).into_iter().enumerate() {
            let category_id = 1 + (k % 2) as u64;
            gts.push(GroundTruth {
                id: gts.len() as u64 + 1,
                image_id,
                category_id,
                bbox: b,
                iscrowd: false,
                mask: None,
            });
            if r.random_bool(0.8) {
                let j = |r: &mut ChaCha8Rng| r.random_range(-6.0..6.0);
                dets.push(Detection {
                    image_id,
                    category_id,
                    bbox: BBox::new(b.x + j(&mut r), b.y + j(&mut r), b.w, b.h),
                    score: r.random_range(0.3..1.0),
                    mask: None,
                });
            }
        }
        for b in boxes(per_image / 4, 700.0, seed ^ image_id ^ 99) {
            dets.push(Detection { image_id, category_id: 1, bbox: b, score: r.random_range(0.0..0.6), mask: None });
        }
    }
    (dets, gts)
}

pub fn foregrounds(n: usize, seed: u64) -> Vec<ForegroundInstance> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let s: u32 = r.random_range(30..90);
            let c = s as f64 / 2.0;
            let img = RgbaImage::from_fn(s, s, |x, y| {
                let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                Rgba([140, 120, 90, if d < c { 255 } else { 0 }])
            });
            ForegroundInstance::new(img, 1, format!("fg{i}")).expect("non-empty alpha")
        })
        .collect()
}

pub fn backgrounds(n: usize, w: u32, h: u32) -> Vec<Background> {
    (0..n)
        .map(|k| Background {
            image: RgbImage::from_fn(w, h, |x, y| Rgb([(x / 4) as u8, (y / 4) as u8, k as u8 * 40])),
            source_id: format!("bg{k}"),
        })
        .collect()
}
