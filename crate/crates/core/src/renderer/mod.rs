//! CPU volume splatting: projection, tiled and brute-force α-blending, the
//! backward pass and image I/O.

pub mod camera;
pub mod dual;
pub mod frame;
pub mod ppm;
pub mod project;
pub mod raster;

pub use camera::Camera;
pub use frame::{render, render_node, Frame, PrimitiveGrads, RenderStats, Renderer};
pub use raster::{rasterize, rasterize_bruteforce, RasterMode, RenderOutput, Splat2D};
