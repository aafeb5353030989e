//! Procedural scenes, edits, rendering and pair preprocessing.

pub mod augment;
pub mod edit;
pub mod preprocess;
pub mod raster;
pub mod render;
pub mod scene;

pub use augment::{augment, AugmentConfig};
pub use edit::{apply_edit, sample_edit, Category, EditChange, EditInstruction};
pub use preprocess::{concat_and_resize, concat_vertical, resize_bilinear};
pub use raster::Raster;
pub use render::{Jitter, Renderer};
pub use scene::{sample_scene, sample_scene_with, ColorName, Scene, SceneObject, ShapeKind, Size, Texture};
