//! Box and mask geometry: IoU, anchor target assignment, box-delta
//! parameterization and greedy non-max suppression.
//!
//! Boxes are `(x, y, w, h)` with a top-left origin, the same convention the
//! COCO files use, so no conversion happens anywhere in the crate.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    // Area measured from the edges so that a box compared with itself yields
    // an intersection bitwise equal to its own area.
    fn edge_area(&self) -> f64 {
        (self.right() - self.x) * (self.bottom() - self.y)
    }
}

/// Intersection over union of two boxes. Returns 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.edge_area() + b.edge_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Binary instance mask stored row-major.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for InstanceMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InstanceMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl InstanceMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Mask with the pixel-aligned rectangle `[x, x+w) × [y, y+h)` set,
    /// clipped to the grid.
    pub fn from_rect(width: u32, height: u32, x: i64, y: i64, w: u32, h: u32) -> Self {
        Self::from_fn(width, height, |px, py| {
            let (px, py) = (px as i64, py as i64);
            px >= x && px < x + w as i64 && py >= y && py < y + h as i64
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    /// Number of set cells.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Smallest pixel-aligned box covering every set cell, `None` when empty.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            let row = &self.bits[y as usize * self.width as usize..][..self.width as usize];
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap_or(first);
            any = true;
            x0 = x0.min(first as u32);
            x1 = x1.max(last as u32);
            y0 = y0.min(y);
            y1 = y;
        }
        any.then(|| {
            BBox::new(
                x0 as f64,
                y0 as f64,
                (x1 - x0 + 1) as f64,
                (y1 - y0 + 1) as f64,
            )
        })
    }

    /// Label 8-connected components. Returns one mask per component, ordered
    /// by the row-major position of each component's first pixel.
    pub fn components(&self) -> Vec<InstanceMask> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut label = vec![0u32; w * h];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.bits[start] || label[start] != 0 {
                continue;
            }
            let id = comps.len() as u32 + 1;
            let mut cells = Vec::new();
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                cells.push(i);
                let (cx, cy) = ((i % w) as i64, (i / w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if self.bits[j] && label[j] == 0 {
                            label[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
            comps.push(cells);
        }
        comps
            .into_iter()
            .map(|cells| {
                let mut m = InstanceMask::new(self.width, self.height);
                for i in cells {
                    m.bits[i] = true;
                }
                m
            })
            .collect()
    }

    pub fn component_count(&self) -> usize {
        self.components().len()
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }
}

/// `|a ∧ b| / |a ∨ b|`, zero when both masks are empty.
pub fn mask_iou(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::MaskDimensionMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += (p && q) as u64;
        union += (p || q) as u64;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// A pre-defined candidate box on one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub bbox: BBox,
    pub level: u8,
    pub objectness: Option<f64>,
}

impl Anchor {
    pub fn new(bbox: BBox, level: u8) -> Self {
        Self {
            bbox,
            level,
            objectness: None,
        }
    }
}

/// Anchor layout: one square base size and stride per pyramid level, each
/// expanded over the aspect ratios. Defaults follow the common FPN setup of
/// five levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub sizes: Vec<f64>,
    pub strides: Vec<u32>,
    /// Height / width ratios.
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            sizes: vec![32.0, 64.0, 128.0, 256.0, 512.0],
            strides: vec![4, 8, 16, 32, 64],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

/// Lay anchors over an image: for every level, one anchor per (cell, ratio),
/// centered on the cell center and keeping the area `size²`.
pub fn generate_anchors(image_w: u32, image_h: u32, cfg: &AnchorConfig) -> Vec<Anchor> {
    let mut out = Vec::new();
    for (level, (&size, &stride)) in cfg.sizes.iter().zip(&cfg.strides).enumerate() {
        let cols = image_w.div_ceil(stride);
        let rows = image_h.div_ceil(stride);
        for r in 0..rows {
            for c in 0..cols {
                let cx = (c as f64 + 0.5) * stride as f64;
                let cy = (r as f64 + 0.5) * stride as f64;
                for &ratio in &cfg.ratios {
                    let w = size / ratio.sqrt();
                    let h = size * ratio.sqrt();
                    out.push(Anchor::new(
                        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h),
                        level as u8,
                    ));
                }
            }
        }
    }
    out
}

/// `(t_x, t_y, t_w, t_h)` of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

fn require_positive(b: &BBox) -> Result<()> {
    if b.w > 0.0 && b.h > 0.0 && b.w.is_finite() && b.h.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveBox { w: b.w, h: b.h })
    }
}

pub fn encode_delta(gt: &BBox, anchor: &BBox) -> Result<BoxDelta> {
    require_positive(anchor)?;
    require_positive(gt)?;
    Ok(BoxDelta {
        tx: (gt.x - anchor.x) / anchor.w,
        ty: (gt.y - anchor.y) / anchor.h,
        tw: (gt.w / anchor.w).ln(),
        th: (gt.h / anchor.h).ln(),
    })
}

/// Inverse of [`encode_delta`].
pub fn decode_delta(delta: &BoxDelta, anchor: &BBox) -> BBox {
    BBox {
        x: anchor.x + delta.tx * anchor.w,
        y: anchor.y + delta.ty * anchor.h,
        w: anchor.w * delta.tw.exp(),
        h: anchor.h * delta.th.exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorAssignment {
    pub anchor_index: usize,
    pub label: AnchorLabel,
    pub gt_index: Option<usize>,
}

pub const DEFAULT_POS_IOU: f64 = 0.7;
pub const DEFAULT_NEG_IOU: f64 = 0.3;

/// Label anchors against ground-truth boxes.
///
/// Positive when the best IoU reaches `pos_thresh`, negative below
/// `neg_thresh`, ignored in between. A ground truth that no anchor reaches at
/// `pos_thresh` promotes its best-overlapping anchor (lowest index on ties,
/// only if that overlap is non-zero) to positive.
pub fn assign_anchors(
    anchors: &[Anchor],
    gts: &[BBox],
    pos_thresh: f64,
    neg_thresh: f64,
) -> Result<Vec<AnchorAssignment>> {
    if !(0.0..=1.0).contains(&neg_thresh)
        || !(0.0..=1.0).contains(&pos_thresh)
        || neg_thresh > pos_thresh
    {
        return Err(Error::InvalidThreshold(format!(
            "need 0 <= neg ({neg_thresh}) <= pos ({pos_thresh}) <= 1"
        )));
    }

    let table: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| gts.iter().map(|g| iou(&a.bbox, g)).collect())
        .collect();

    let mut out: Vec<AnchorAssignment> = table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let best = row
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |acc, (j, &v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            let (label, gt_index) = match best {
                Some((j, v)) if v >= pos_thresh => (AnchorLabel::Positive, Some(j)),
                Some((_, v)) if v >= neg_thresh => (AnchorLabel::Ignore, None),
                _ => (AnchorLabel::Negative, None),
            };
            AnchorAssignment {
                anchor_index: i,
                label,
                gt_index,
            }
        })
        .collect();

    for j in 0..gts.len() {
        if table.iter().any(|row| row[j] >= pos_thresh) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in table.iter().enumerate() {
            if row[j] > best.map_or(0.0, |b| b.1) {
                best = Some((i, row[j]));
            }
        }
        if let Some((i, _)) = best {
            let slot = &mut out[i];
            if slot.label != AnchorLabel::Positive {
                slot.label = AnchorLabel::Positive;
                slot.gt_index = Some(j);
            }
        }
    }
    Ok(out)
}

/// Order of candidate indices by descending score, lower index first on ties.
pub(crate) fn score_order(scores: impl ExactSizeIterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy non-max suppression.
///
/// Repeatedly keeps the best remaining box and discards every remaining box
/// whose IoU with it exceeds `iou_thresh`. Boxes identical to a kept box are
/// always discarded. Returns kept indices in descending score order.
pub fn nms(dets: &[(BBox, f64)], iou_thresh: f64) -> Vec<usize> {
    let order = score_order(dets.iter().map(|d| d.1));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if suppressed[j] {
                continue;
            }
            let (a, b) = (&dets[i].0, &dets[j].0);
            if a == b || iou(a, b) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    keep
}
