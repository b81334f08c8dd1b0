//! Oriented object detection toolkit.
//!
//! - [`rbox`]: rotated, quadrilateral and horizontal boxes in the OpenCV angle
//!   convention, with canonicalization and conversions.
//! - [`geometry`]: convex clipping, rotated/horizontal IoU and greedy NMS.
//! - [`anchors`]: pyramid anchor generation and the regression codec.
//! - [`losses`]: smooth L1, focal, pixel-wise cross-entropy, the IoU-smooth
//!   L1 regression loss and the multi-task assembly.
//! - [`inld`]: feature-map denoising algebra (attention and instance-level
//!   re-weighting, the segmentation-guided block, image-level filters).
//! - [`dota`]: DOTA annotation parsing, tiling, merging and submission files.
//! - [`eval`]: VOC-style AP/mAP for OBB and HBB tasks.

pub mod anchors;
pub mod dota;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inld;
pub mod losses;
pub mod rbox;

pub use crate::anchors::{AnchorMode, AnchorSpec, BoxCodec, RegressionTarget};
pub use crate::error::{Error, Result};
pub use crate::geometry::{hiou, riou, rnms, ConvexPolygon, Point};
pub use crate::rbox::{HBox, Quad, RBox5};
