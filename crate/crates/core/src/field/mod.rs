//! Dense voxel radiance field: storage, cameras and volume rendering.

mod camera;
mod grid;
mod render;

pub use camera::{Camera, Ray, Vec3};
pub use grid::{logit, sigmoid, Aabb, Corners, VoxelGrid};
pub use render::{
    compositing_weights, register_grid, render_image, render_patch_with_grad, render_ray,
    render_region, GridLeaves,
};
