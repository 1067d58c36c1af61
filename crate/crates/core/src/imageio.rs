use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ImageReader, Limits};

use crate::error::{Error, Result};

/// Largest raster accepted by [`load_raster`], in pixels. An RGB raster at this
/// size needs 1.5 GiB in memory.
pub const MAX_RASTER_PIXELS: u64 = 512 * 1024 * 1024;

/// Decode a PNG or TIFF raster, refusing anything above [`MAX_RASTER_PIXELS`].
pub fn load_raster(path: impl AsRef<Path>) -> Result<DynamicImage> {
    let path = path.as_ref();
    let open = || -> Result<ImageReader<_>> {
        ImageReader::open(path)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| Error::io(path, e))
    };
    let (width, height) = open()?
        .into_dimensions()
        .map_err(|e| Error::image(path, e))?;
    if width as u64 * height as u64 > MAX_RASTER_PIXELS {
        return Err(Error::RasterTooLarge {
            width,
            height,
            limit: MAX_RASTER_PIXELS,
        });
    }
    let mut reader = open()?;
    let mut limits = Limits::default();
    limits.max_alloc = None;
    reader.limits(limits);
    reader.decode().map_err(|e| Error::image(path, e))
}

pub fn write_png(path: impl AsRef<Path>, img: &DynamicImage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new_with_quality(
        BufWriter::new(file),
        CompressionType::Fast,
        FilterType::Adaptive,
    );
    img.write_with_encoder(encoder)
        .map_err(|e| Error::image(path, e))
}
