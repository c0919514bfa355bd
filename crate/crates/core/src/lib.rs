//! Point-based 3D object detection building blocks for LiDAR scenes.

pub mod anchors;
pub mod bench;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod nms;
pub mod pipeline;
pub mod points_pool;
pub mod rng;
pub mod selfcheck;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{Box3D, Point3, PointCloud};
