//! Split a large raster into a regular grid of fixed-size tiles.
//!
//! Georeferencing is not interpreted; the input is a plain raster. Inputs are
//! decoded fully into memory, so the accepted size is capped by
//! [`crate::imageio::MAX_RASTER_PIXELS`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GenericImage, GenericImageView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::write_png;

pub const DEFAULT_NAME_TEMPLATE: &str = "tile_{row}_{col}";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeMode {
    /// Zero-pad edge tiles to the full tile size.
    #[default]
    Pad,
    /// Emit edge tiles cut at the raster border.
    Truncate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub image_w: u32,
    pub image_h: u32,
    pub cols: u32,
    pub rows: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    /// File stem with `{row}` and `{col}` placeholders.
    pub name_template: String,
}

/// One grid cell: its position and the extent of source pixels it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSpec {
    pub name: String,
    pub row: u32,
    pub col: u32,
    pub x: u32,
    pub y: u32,
    pub valid_w: u32,
    pub valid_h: u32,
}

pub fn plan_grid(image_w: u32, image_h: u32, tile_w: u32, tile_h: u32) -> Result<TileGrid> {
    if image_w == 0 || image_h == 0 || tile_w == 0 || tile_h == 0 {
        return Err(Error::DimensionMismatch(format!(
            "image {image_w}x{image_h} and tile {tile_w}x{tile_h} must be positive"
        )));
    }
    Ok(TileGrid {
        image_w,
        image_h,
        cols: image_w.div_ceil(tile_w),
        rows: image_h.div_ceil(tile_h),
        tile_w,
        tile_h,
        name_template: DEFAULT_NAME_TEMPLATE.to_string(),
    })
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tile_name(&self, row: u32, col: u32) -> String {
        let rw = (self.rows.max(2) - 1).to_string().len();
        let cw = (self.cols.max(2) - 1).to_string().len();
        self.name_template
            .replace("{row}", &format!("{row:0rw$}"))
            .replace("{col}", &format!("{col:0cw$}"))
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> Vec<TileSpec> {
        let mut out = Vec::with_capacity(self.len());
        for row in 0..self.rows {
            for col in 0..self.cols {
                let (x, y) = (col * self.tile_w, row * self.tile_h);
                out.push(TileSpec {
                    name: self.tile_name(row, col),
                    row,
                    col,
                    x,
                    y,
                    valid_w: self.tile_w.min(self.image_w - x),
                    valid_h: self.tile_h.min(self.image_h - y),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitOptions {
    pub edge: EdgeMode,
    /// Skip tiles whose fraction of non-background pixels is below this.
    /// A pixel is background when every colour channel is zero or it is
    /// fully transparent. `0.0` keeps every tile.
    pub min_content: f64,
}

/// Cut the tile for `spec` out of `image`.
pub fn extract_tile(image: &DynamicImage, grid: &TileGrid, spec: &TileSpec, edge: EdgeMode) -> DynamicImage {
    let view = image.crop_imm(spec.x, spec.y, spec.valid_w, spec.valid_h);
    let full = spec.valid_w == grid.tile_w && spec.valid_h == grid.tile_h;
    if full || edge == EdgeMode::Truncate {
        return view;
    }
    let mut canvas = blank_like(image, grid.tile_w, grid.tile_h);
    canvas
        .copy_from(&view, 0, 0)
        .expect("valid extent fits inside a full tile");
    canvas
}

fn blank_like(image: &DynamicImage, w: u32, h: u32) -> DynamicImage {
    match image {
        DynamicImage::ImageLuma8(_) => DynamicImage::new_luma8(w, h),
        DynamicImage::ImageLumaA8(_) => DynamicImage::new_luma_a8(w, h),
        DynamicImage::ImageRgb8(_) => DynamicImage::new_rgb8(w, h),
        DynamicImage::ImageLuma16(_) => DynamicImage::new_luma16(w, h),
        DynamicImage::ImageLumaA16(_) => DynamicImage::new_luma_a16(w, h),
        DynamicImage::ImageRgb16(_) => DynamicImage::new_rgb16(w, h),
        DynamicImage::ImageRgba16(_) => DynamicImage::new_rgba16(w, h),
        _ => DynamicImage::new_rgba8(w, h),
    }
}

/// Fraction of pixels inside the tile's valid extent that carry content.
pub fn content_fraction(tile: &DynamicImage, spec: &TileSpec) -> f64 {
    let n = spec.valid_w as u64 * spec.valid_h as u64;
    if n == 0 {
        return 0.0;
    }
    let mut content = 0u64;
    for y in 0..spec.valid_h {
        for x in 0..spec.valid_w {
            let p = tile.get_pixel(x, y).0;
            if p[3] != 0 && (p[0] | p[1] | p[2]) != 0 {
                content += 1;
            }
        }
    }
    content as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileFile {
    pub spec: TileSpec,
    pub path: PathBuf,
}

/// Write one PNG per tile plus the manifest into `out_dir`.
///
/// Manifest lines are tab-separated: name, row, col, x offset, y offset,
/// valid width, valid height.
pub fn split(
    image: &DynamicImage,
    grid: &TileGrid,
    out_dir: impl AsRef<Path>,
    opts: SplitOptions,
) -> Result<Vec<TileFile>> {
    let out_dir = out_dir.as_ref();
    if image.width() != grid.image_w || image.height() != grid.image_h {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, grid was planned for {}x{}",
            image.width(),
            image.height(),
            grid.image_w,
            grid.image_h
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let written: Vec<Option<TileFile>> = grid
        .tiles()
        .into_par_iter()
        .map(|spec| {
            let tile = extract_tile(image, grid, &spec, opts.edge);
            if opts.min_content > 0.0 && content_fraction(&tile, &spec) < opts.min_content {
                return Ok(None);
            }
            let path = out_dir.join(format!("{}.png", spec.name));
            write_png(&path, &tile)?;
            Ok(Some(TileFile { spec, path }))
        })
        .collect::<Result<_>>()?;
    let files: Vec<TileFile> = written.into_iter().flatten().collect();

    let mut manifest = String::new();
    for f in &files {
        let s = &f.spec;
        let _ = writeln!(
            manifest,
            "{}.png\t{}\t{}\t{}\t{}\t{}\t{}",
            s.name, s.row, s.col, s.x, s.y, s.valid_w, s.valid_h
        );
    }
    let mpath = out_dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(files)
}

/// Paste tiles back onto a `width × height` canvas, copying only each tile's
/// valid extent. Missing tiles leave zeros.
pub fn reassemble<'a>(
    tiles: impl IntoIterator<Item = (&'a TileSpec, &'a DynamicImage)>,
    like: &DynamicImage,
    width: u32,
    height: u32,
) -> Result<DynamicImage> {
    let mut canvas = blank_like(like, width, height);
    for (spec, tile) in tiles {
        let view = tile.crop_imm(0, 0, spec.valid_w, spec.valid_h);
        canvas.copy_from(&view, spec.x, spec.y).map_err(|e| {
            Error::DimensionMismatch(format!("tile {} does not fit: {e}", spec.name))
        })?;
    }
    Ok(canvas)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, TileSpec)>> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::CaseParse {
            line: lineno + 1,
            message: format!("malformed manifest line {line:?}"),
        };
        if f.len() != 7 {
            return Err(bad());
        }
        let n: Vec<u32> = f[1..]
            .iter()
            .map(|v| v.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let name = f[0].trim_end_matches(".png").to_string();
        out.push((
            dir.join(f[0]),
            TileSpec {
                name,
                row: n[0],
                col: n[1],
                x: n[2],
                y: n[3],
                valid_w: n[4],
                valid_h: n[5],
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_examples() {
        let g = plan_grid(32000, 8000, 800, 800).unwrap();
        assert_eq!((g.cols, g.rows, g.len()), (40, 10, 400));
        let g = plan_grid(800, 800, 800, 800).unwrap();
        assert_eq!((g.cols, g.rows), (1, 1));
        let g = plan_grid(801, 800, 800, 800).unwrap();
        assert_eq!((g.cols, g.rows), (2, 1));
        assert_eq!(g.tiles()[1].valid_w, 1);
        assert!(plan_grid(0, 5, 1, 1).is_err());
    }

    #[test]
    fn names_are_zero_padded() {
        let g = plan_grid(32000, 8000, 800, 800).unwrap();
        assert_eq!(g.tile_name(3, 7), "tile_3_07");
        assert_eq!(g.tiles().last().unwrap().name, "tile_9_39");
    }

    #[test]
    fn padded_edge_tile_is_full_size() {
        let img = DynamicImage::new_rgb8(5, 3);
        let g = plan_grid(5, 3, 4, 4).unwrap();
        let specs = g.tiles();
        let t = extract_tile(&img, &g, &specs[1], EdgeMode::Pad);
        assert_eq!(t.dimensions(), (4, 4));
        let t = extract_tile(&img, &g, &specs[1], EdgeMode::Truncate);
        assert_eq!(t.dimensions(), (1, 3));
    }
}
