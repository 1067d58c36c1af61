//! COCO annotation files: schema types, a validating reader, a canonical
//! writer, and mask encodings (uncompressed RLE and polygons).
//!
//! The writer is canonical: images, annotations and categories are emitted in
//! id order, keys in a fixed order, floats in shortest round-trip form. Equal
//! datasets therefore produce byte-identical files.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::{BBox, InstanceMask};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    #[serde(with = "bbox_array")]
    pub bbox: BBox,
    pub area: f64,
    #[serde(default)]
    pub segmentation: Segmentation,
    #[serde(default)]
    pub iscrowd: u8,
}

/// Either a list of flat `[x0, y0, x1, y1, ...]` rings or an uncompressed RLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(Rle),
}

impl Default for Segmentation {
    fn default() -> Self {
        Segmentation::Polygons(Vec::new())
    }
}

impl Segmentation {
    pub fn is_empty(&self) -> bool {
        matches!(self, Segmentation::Polygons(p) if p.is_empty())
    }

    /// Rasterize onto a `width × height` grid.
    pub fn to_mask(&self, width: u32, height: u32) -> Result<InstanceMask> {
        match self {
            Segmentation::Rle(rle) => {
                if rle.width() != width || rle.height() != height {
                    return Err(Error::DimensionMismatch(format!(
                        "RLE is {}x{}, image is {width}x{height}",
                        rle.width(),
                        rle.height()
                    )));
                }
                rle_to_mask(&rle.counts, width, height)
            }
            Segmentation::Polygons(p) => Ok(polygons_to_mask(p, width, height)),
        }
    }
}

/// Column-major run lengths starting with a (possibly empty) run of zeros.
/// `size` is `[height, width]` as in COCO.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: Vec<u64>,
    pub size: [u32; 2],
}

impl Rle {
    pub fn from_mask(mask: &InstanceMask) -> Self {
        Self {
            counts: mask_to_rle(mask),
            size: [mask.height(), mask.width()],
        }
    }

    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    pub fn to_mask(&self) -> Result<InstanceMask> {
        rle_to_mask(&self.counts, self.width(), self.height())
    }

    /// Number of foreground cells; odd-indexed runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}

mod bbox_array {
    use super::*;

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> std::result::Result<S::Ok, S::Error> {
        b.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BBox, D::Error> {
        <[f64; 4]>::deserialize(d).map(BBox::from_array)
    }
}

pub fn mask_to_rle(mask: &InstanceMask) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..mask.width() {
        for y in 0..mask.height() {
            let bit = mask.get(x, y);
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_to_mask(counts: &[u64], width: u32, height: u32) -> Result<InstanceMask> {
    let expected = width as u64 * height as u64;
    let sum: u64 = counts.iter().sum();
    if sum != expected {
        return Err(Error::RleCountMismatch { sum, expected });
    }
    let mut mask = InstanceMask::new(width, height);
    let h = height as u64;
    let mut pos = 0u64;
    for (i, &run) in counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + run {
                mask.set((p / h) as u32, (p % h) as u32, true);
            }
        }
        pos += run;
    }
    Ok(mask)
}

/// Trace the pixel-edge boundary of a mask into closed rings.
///
/// Outer boundaries run clockwise on screen (positive shoelace area with y
/// pointing down) and holes counter-clockwise, so the signed areas of all
/// rings sum to the pixel count. Collinear vertices are dropped.
pub fn mask_to_polygons(mask: &InstanceMask) -> Vec<Vec<f64>> {
    type Pt = (i64, i64);
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as u32, y as u32);

    let mut edges: Vec<(Pt, Pt)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !on(x, y) {
                continue;
            }
            if !on(x, y - 1) {
                edges.push(((x, y), (x + 1, y)));
            }
            if !on(x + 1, y) {
                edges.push(((x + 1, y), (x + 1, y + 1)));
            }
            if !on(x, y + 1) {
                edges.push(((x + 1, y + 1), (x, y + 1)));
            }
            if !on(x - 1, y) {
                edges.push(((x, y + 1), (x, y)));
            }
        }
    }

    let mut outgoing: HashMap<Pt, Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.0).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();

    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut ring: Vec<Pt> = Vec::new();
        let mut cur = start;
        loop {
            used[cur] = true;
            let (a, b) = edges[cur];
            ring.push(a);
            let dir = (b.0 - a.0, b.1 - a.1);
            let Some(cands) = outgoing.get(&b) else { break };
            // Prefer a right turn at pinch points, then straight, then left.
            let rank = |i: usize| {
                let (c, d) = edges[i];
                let nd = (d.0 - c.0, d.1 - c.1);
                if nd == (-dir.1, dir.0) {
                    0
                } else if nd == dir {
                    1
                } else {
                    2
                }
            };
            match cands.iter().copied().filter(|&i| !used[i]).min_by_key(|&i| rank(i)) {
                Some(next) => cur = next,
                None => break,
            }
        }
        let n = ring.len();
        let mut flat = Vec::with_capacity(n * 2);
        for i in 0..n {
            let prev = ring[(i + n - 1) % n];
            let p = ring[i];
            let next = ring[(i + 1) % n];
            let collinear = (p.0 - prev.0) * (next.1 - p.1) == (p.1 - prev.1) * (next.0 - p.0);
            if !collinear {
                flat.push(p.0 as f64);
                flat.push(p.1 as f64);
            }
        }
        rings.push(flat);
    }
    rings
}

/// Rasterize rings by sampling pixel centers with the even-odd rule.
pub fn polygons_to_mask(polygons: &[Vec<f64>], width: u32, height: u32) -> InstanceMask {
    let mut segs: Vec<(f64, f64, f64, f64)> = Vec::new();
    for ring in polygons {
        let n = ring.len() / 2;
        for i in 0..n {
            let j = (i + 1) % n;
            segs.push((ring[2 * i], ring[2 * i + 1], ring[2 * j], ring[2 * j + 1]));
        }
    }
    let mut mask = InstanceMask::new(width, height);
    let mut xs = Vec::new();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        xs.clear();
        for &(x0, y0, x1, y1) in &segs {
            if (y0 <= cy) != (y1 <= cy) {
                xs.push(x0 + (cy - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = (pair[0] - 0.5).ceil().max(0.0) as i64;
            let end = ((pair[1] - 0.5).ceil() as i64).min(width as i64);
            for x in start..end {
                mask.set(x as u32, y, true);
            }
        }
    }
    mask
}

/// Absolute value of the summed signed shoelace areas of all rings.
pub fn polygon_area(polygons: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for ring in polygons {
        let n = ring.len() / 2;
        for i in 0..n {
            let j = (i + 1) % n;
            total += ring[2 * i] * ring[2 * j + 1] - ring[2 * j] * ring[2 * i + 1];
        }
    }
    (total / 2.0).abs()
}

fn polygon_bbox(polygons: &[Vec<f64>]) -> Option<BBox> {
    let mut pts = polygons.iter().flat_map(|r| r.chunks_exact(2));
    let first = pts.next()?;
    let (mut x0, mut y0, mut x1, mut y1) = (first[0], first[1], first[0], first[1]);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
}

const BBOX_EDGE_TOL: f64 = 1.0;
const POLYGON_AREA_REL_TOL: f64 = 0.02;

fn bbox_close(a: &BBox, b: &BBox) -> bool {
    (a.x - b.x).abs() <= BBOX_EDGE_TOL
        && (a.y - b.y).abs() <= BBOX_EDGE_TOL
        && (a.right() - b.right()).abs() <= BBOX_EDGE_TOL
        && (a.bottom() - b.bottom()).abs() <= BBOX_EDGE_TOL
}

impl CocoDataset {
    /// Sort every table by id.
    pub fn canonicalize(&mut self) {
        self.images.sort_by_key(|i| i.id);
        self.annotations.sort_by_key(|a| a.id);
        self.categories.sort_by_key(|c| c.id);
    }

    pub fn image(&self, id: u64) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut image_dims = HashMap::new();
        for img in &self.images {
            if img.id == 0 {
                return Err(schema("image", 0, "ids must be positive"));
            }
            if image_dims.insert(img.id, (img.width, img.height)).is_some() {
                return Err(Error::DuplicateId {
                    entity: "image",
                    id: img.id,
                });
            }
            if img.width == 0 || img.height == 0 {
                return Err(schema("image", img.id, "width and height must be positive"));
            }
        }
        let mut cats = HashSet::new();
        for c in &self.categories {
            if c.id == 0 {
                return Err(schema("category", 0, "ids must be positive"));
            }
            if !cats.insert(c.id) {
                return Err(Error::DuplicateId {
                    entity: "category",
                    id: c.id,
                });
            }
        }
        let mut ann_ids = HashSet::new();
        for a in &self.annotations {
            if a.id == 0 {
                return Err(schema("annotation", 0, "ids must be positive"));
            }
            if !ann_ids.insert(a.id) {
                return Err(Error::DuplicateId {
                    entity: "annotation",
                    id: a.id,
                });
            }
            let Some(&(w, h)) = image_dims.get(&a.image_id) else {
                return Err(Error::DanglingImage {
                    annotation_id: a.id,
                    image_id: a.image_id,
                });
            };
            if !cats.contains(&a.category_id) {
                return Err(Error::DanglingCategory {
                    annotation_id: a.id,
                    category_id: a.category_id,
                });
            }
            validate_annotation(a, w, h)?;
        }
        Ok(())
    }
}

fn schema(entity: &'static str, id: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        entity,
        id,
        message: message.into(),
    }
}

fn validate_annotation(a: &CocoAnnotation, width: u32, height: u32) -> Result<()> {
    let fail = |msg: String| Err(schema("annotation", a.id, msg));
    if !a.bbox.is_valid() {
        return fail(format!("invalid bbox {:?}", a.bbox.to_array()));
    }
    if a.iscrowd > 1 {
        return fail(format!("iscrowd must be 0 or 1, got {}", a.iscrowd));
    }
    if !(a.area >= 0.0) {
        return fail(format!("negative area {}", a.area));
    }
    match &a.segmentation {
        Segmentation::Rle(rle) => {
            if rle.width() != width || rle.height() != height {
                return fail(format!(
                    "RLE size {:?} does not match image {width}x{height}",
                    rle.size
                ));
            }
            let mask = rle.to_mask().map_err(|e| schema("annotation", a.id, e.to_string()))?;
            let pixels = mask.area() as f64;
            if (a.area - pixels).abs() > 1e-6 {
                return fail(format!("area {} but mask has {pixels} pixels", a.area));
            }
            if let Some(tight) = mask.tight_bbox() {
                if !bbox_close(&tight, &a.bbox) {
                    return fail(format!(
                        "bbox {:?} does not match mask extent {:?}",
                        a.bbox.to_array(),
                        tight.to_array()
                    ));
                }
            }
        }
        Segmentation::Polygons(rings) => {
            if rings.iter().any(|r| r.len() % 2 != 0 || r.len() < 6) {
                return fail("polygon rings need at least three x,y pairs".into());
            }
            if rings.iter().flatten().any(|v| !v.is_finite()) {
                return fail("non-finite polygon coordinate".into());
            }
            if let Some(pb) = polygon_bbox(rings) {
                if !bbox_close(&pb, &a.bbox) {
                    return fail(format!(
                        "bbox {:?} does not match polygon extent {:?}",
                        a.bbox.to_array(),
                        pb.to_array()
                    ));
                }
                let pa = polygon_area(rings);
                if (a.area - pa).abs() > POLYGON_AREA_REL_TOL * pa.max(a.area) {
                    return fail(format!("area {} but polygon area is {pa}", a.area));
                }
            }
        }
    }
    Ok(())
}

/// Serialize to canonical bytes (compact JSON plus trailing newline).
pub fn to_canonical_bytes(ds: &CocoDataset) -> Vec<u8> {
    let mut ds = ds.clone();
    ds.canonicalize();
    let mut out = serde_json::to_vec(&ds).expect("dataset serialization is infallible");
    out.push(b'\n');
    out
}

pub fn parse_coco(bytes: &[u8], origin: &Path) -> Result<CocoDataset> {
    let ds: CocoDataset = serde_json::from_slice(bytes).map_err(|source| Error::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    ds.validate()?;
    Ok(ds)
}

pub fn read_coco(path: impl AsRef<Path>) -> Result<CocoDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_coco(&bytes, path)
}

pub fn write_coco(ds: &CocoDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_canonical_bytes(ds)).map_err(|e| Error::io(path, e))
}

/// Build an annotation whose bbox and area are derived from `mask`.
pub fn annotation_from_mask(
    id: u64,
    image_id: u64,
    category_id: u64,
    mask: &InstanceMask,
) -> CocoAnnotation {
    CocoAnnotation {
        id,
        image_id,
        category_id,
        bbox: mask.tight_bbox().unwrap_or_default(),
        area: mask.area() as f64,
        segmentation: Segmentation::Rle(Rle::from_mask(mask)),
        iscrowd: 0,
    }
}
