//! Synthetic aerial-imagery dataset generation and instance-segmentation
//! evaluation for standing dead trees.
//!
//! The pieces: box and mask geometry ([`geom`]), COCO annotation I/O
//! ([`coco_io`]), large-raster tiling ([`tiler`]), cut-and-paste scene
//! synthesis ([`synth`]), Mask R-CNN loss and optimizer numerics ([`losses`])
//! and detection metrics ([`eval`]).

pub mod coco_io;
pub mod error;
pub mod eval;
pub mod geom;
pub mod imageio;
pub mod losses;
pub mod synth;
pub mod tiler;

pub use coco_io::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, Rle, Segmentation};
pub use error::{Error, Result};
pub use eval::{Detection, EvalParams, EvalReport, GroundTruth};
pub use geom::{iou, mask_iou, nms, Anchor, BBox, BoxDelta, InstanceMask};
pub use losses::{OptimizerKind, SchedulePlan};
pub use synth::{OcclusionPolicy, Scene, SynthConfig};
pub use tiler::{EdgeMode, TileGrid, TileSpec};
