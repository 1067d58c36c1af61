//! Independent oracles shared by the property and acceptance tests. Nothing
//! here calls the crate's algorithms; each oracle re-derives its answer by
//! counting or exhaustive search.
#![allow(dead_code)]

use deadwood::geom::BBox;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(r: &mut ChaCha8Rng, extent: f64, min_side: f64, max_side: f64) -> BBox {
    BBox::new(
        r.random_range(0.0..extent),
        r.random_range(0.0..extent),
        r.random_range(min_side..max_side),
        r.random_range(min_side..max_side),
    )
}

/// Sample points `(k + 0.5) / sub` covering `[lo, hi)`.
fn samples(lo: f64, hi: f64, sub: u32) -> std::ops::Range<i64> {
    let s = sub as f64;
    (lo * s).floor() as i64 - 1..(hi * s).ceil() as i64 + 1
}

/// IoU by counting sub-pixel sample points inside each box. A rectangle's
/// lattice count factors into its per-axis counts, so each axis is walked
/// once and the 2D counts are products.
pub fn raster_iou(a: &BBox, b: &BBox, sub: u32) -> f64 {
    let s = sub as f64;
    let axis = |a0: f64, a1: f64, b0: f64, b1: f64| -> (u64, u64, u64) {
        let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
        for k in samples(a0.min(b0), a1.max(b1), sub) {
            let p = (k as f64 + 0.5) / s;
            let ia = p >= a0 && p < a1;
            let ib = p >= b0 && p < b1;
            na += ia as u64;
            nb += ib as u64;
            both += (ia && ib) as u64;
        }
        (na, nb, both)
    };
    let (ax, bx, ix) = axis(a.x, a.x + a.w, b.x, b.x + b.w);
    let (ay, by, iy) = axis(a.y, a.y + a.h, b.y, b.y + b.h);
    let inter = ix * iy;
    let union = ax * ay + bx * by - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Plain-formula IoU used by the brute-force oracles.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let x0 = if a.x > b.x { a.x } else { b.x };
    let y0 = if a.y > b.y { a.y } else { b.y };
    let x1 = if a.x + a.w < b.x + b.w { a.x + a.w } else { b.x + b.w };
    let y1 = if a.y + a.h < b.y + b.h { a.y + a.h } else { b.y + b.h };
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let i = (x1 - x0) * (y1 - y0);
    let u = a.w * a.h + b.w * b.h - i;
    if u <= 0.0 {
        0.0
    } else {
        i / u
    }
}

/// Rank of each index: higher score first, lower index on ties.
fn ranks(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| {
            (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .collect()
}

/// Greedy NMS by exhaustive search: the kept set is the unique subset `S`
/// where `i ∈ S` exactly when no higher-ranked member of `S` suppresses `i`.
/// Returns kept indices sorted ascending.
pub fn nms_oracle(dets: &[(BBox, f64)], thresh: f64) -> Vec<usize> {
    let n = dets.len();
    assert!(n <= 16);
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let rank = ranks(&scores);
    let suppresses = |j: usize, i: usize| {
        let (a, b) = (&dets[j].0, &dets[i].0);
        a == b || ref_iou(a, b) > thresh
    };
    let mut found = Vec::new();
    for set in 0u32..(1 << n) {
        let consistent = (0..n).all(|i| {
            let inside = set & (1 << i) != 0;
            let blocked = (0..n).any(|j| set & (1 << j) != 0 && rank[j] < rank[i] && suppresses(j, i));
            inside != blocked
        });
        if consistent {
            found.push(set);
        }
    }
    assert_eq!(found.len(), 1, "greedy fixed point must be unique");
    (0..n).filter(|i| found[0] & (1 << i) != 0).collect()
}

/// One detection or ground truth for the matching oracle.
#[derive(Debug, Clone, Copy)]
pub struct Item {
    pub image: u64,
    pub cat: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// Greedy matching by exhaustive search over injective assignments. Returns,
/// per detection, the matched gt index. An assignment is accepted when every
/// detection, visited in rank order, holds exactly the best gt (IoU ≥ thresh,
/// lowest index on ties) still free of higher-ranked detections.
pub fn match_oracle(dets: &[Item], gts: &[Item], thresh: f64) -> Vec<Option<usize>> {
    let nd = dets.len();
    let ng = gts.len();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let rank = ranks(&scores);
    let table: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| {
                    if g.image == d.image && g.cat == d.cat {
                        ref_iou(&d.bbox, &g.bbox)
                    } else {
                        -1.0
                    }
                })
                .collect()
        })
        .collect();
    // every assignment: each detection picks a gt or none (encoded as ng)
    let total = (ng + 1).pow(nd as u32);
    let mut accepted = Vec::new();
    for code in 0..total {
        let mut c = code;
        let pick: Vec<Option<usize>> = (0..nd)
            .map(|_| {
                let v = c % (ng + 1);
                c /= ng + 1;
                (v < ng).then_some(v)
            })
            .collect();
        let ok = (0..nd).all(|i| {
            let taken = |g: usize| (0..nd).any(|j| rank[j] < rank[i] && pick[j] == Some(g));
            let mut best: Option<(usize, f64)> = None;
            for g in 0..ng {
                if table[i][g] < 0.0 || taken(g) {
                    continue;
                }
                if best.is_none_or(|(_, bv)| table[i][g] > bv) {
                    best = Some((g, table[i][g]));
                }
            }
            let want = best.filter(|&(_, v)| v >= thresh).map(|(g, _)| g);
            pick[i] == want
        });
        if ok {
            accepted.push(pick);
        }
    }
    assert_eq!(accepted.len(), 1, "greedy matching must be unique");
    accepted.pop().unwrap()
}

/// Precision and recall after keeping every detection scoring at least `s`,
/// for each distinct score in descending order.
pub fn pr_oracle(scored: &[(f64, bool)], n_gt: usize) -> Vec<(f64, f64, f64)> {
    let mut distinct: Vec<f64> = scored.iter().map(|s| s.0).collect();
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
    distinct.dedup();
    distinct
        .into_iter()
        .map(|s| {
            let kept: Vec<bool> = scored.iter().filter(|d| d.0 >= s).map(|d| d.1).collect();
            let tp = kept.iter().filter(|&&t| t).count();
            (s, tp as f64 / kept.len() as f64, tp as f64 / n_gt as f64)
        })
        .collect()
}

/// 101-term sum straight from the definition.
pub fn ap101_oracle(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    let pts = pr_oracle(scored, n_gt);
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let mut best = 0.0f64;
        for &(_, p, rec) in &pts {
            if rec >= r && p > best {
                best = p;
            }
        }
        total += best;
    }
    total / 101.0
}

/// Star-shaped (category 1) and round (category 2) cut-outs of varied size
/// and colour.
pub fn blob_foregrounds(n: usize, seed: u64) -> Vec<deadwood::synth::ForegroundInstance> {
    use image::{Rgba, RgbaImage};
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let size: u32 = r.random_range(20..60);
            let star = i % 2 == 0;
            let col = [r.random_range(90..200u8), r.random_range(80..160u8), r.random_range(60..120u8)];
            let c = size as f64 / 2.0;
            let img = RgbaImage::from_fn(size, size, |x, y| {
                let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                let rad = (dx * dx + dy * dy).sqrt();
                let limit = if star {
                    c * (0.6 + 0.4 * (5.0 * dy.atan2(dx)).cos())
                } else {
                    c * 0.95
                };
                let a = if rad <= limit { 255 } else { 0 };
                let shade = (x * 3 + y * 5) as u8 % 23;
                Rgba([col[0].saturating_add(shade), col[1], col[2].saturating_sub(shade), a])
            });
            deadwood::synth::ForegroundInstance::new(img, if star { 1 } else { 2 }, format!("fg{i}")).unwrap()
        })
        .collect()
}

/// Smoothly varying forest-floor-like backgrounds.
pub fn smooth_backgrounds(n: usize, w: u32, h: u32) -> Vec<deadwood::synth::Background> {
    use image::{Rgb, RgbImage};
    (0..n)
        .map(|k| {
            let f = 0.01 + 0.004 * k as f64;
            let image = RgbImage::from_fn(w, h, |x, y| {
                let v = ((x as f64 * f).sin() + (y as f64 * f * 1.3).cos()) * 30.0;
                Rgb([(60.0 + v) as u8, (100.0 + v) as u8, (50.0 + v / 2.0) as u8])
            });
            deadwood::synth::Background {
                image,
                source_id: format!("bg{k}"),
            }
        })
        .collect()
}

pub fn library(fgs: Vec<deadwood::synth::ForegroundInstance>) -> deadwood::synth::ForegroundLibrary {
    deadwood::synth::ForegroundLibrary {
        instances: fgs,
        categories: vec![
            deadwood::CocoCategory { id: 1, name: "type_a".into() },
            deadwood::CocoCategory { id: 2, name: "type_b".into() },
        ],
    }
}

/// 8-connected component sizes by flood fill, largest first.
pub fn component_sizes(m: &deadwood::InstanceMask) -> Vec<usize> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let mut seen = vec![false; (w * h) as usize];
    let mut sizes = Vec::new();
    for start in 0..w * h {
        if seen[start as usize] || !m.get((start % w) as u32, (start / w) as u32) {
            continue;
        }
        let mut stack = vec![start];
        seen[start as usize] = true;
        let mut n = 0;
        while let Some(p) = stack.pop() {
            n += 1;
            let (x, y) = (p % w, p / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let q = ny * w + nx;
                    if !seen[q as usize] && m.get(nx as u32, ny as u32) {
                        seen[q as usize] = true;
                        stack.push(q);
                    }
                }
            }
        }
        sizes.push(n);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Tight box by scanning every pixel.
pub fn scan_bbox(m: &deadwood::InstanceMask) -> Option<[f64; 4]> {
    let mut ext: Option<(u32, u32, u32, u32)> = None;
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                ext = Some(match ext {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    ext.map(|(x0, y0, x1, y1)| [x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64])
}
