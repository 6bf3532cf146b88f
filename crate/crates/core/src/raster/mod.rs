//! Differentiable rendering of color, z-depth, normal and alpha buffers.
//!
//! Gaussians are projected with the EWA affine approximation, sorted once
//! per frame by view-space z, and alpha-composited front to back. The
//! backward pass is the exact reverse-mode derivative of that forward pass,
//! with the sort order, the minor-axis choice and the normal flip held
//! fixed.

mod backward;
mod export;
mod forward;
mod project;

pub use backward::{render_backward, render_backward_with, BufferGrads, SceneGrads};
pub use export::{write_alpha_png, write_color_png, write_depth_png, write_normal_png};
pub use forward::{render, render_with};
pub use project::{project_gaussian, Splat2D};

/// Splats with view-space z at or below this (meters) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Pixels whose accumulated alpha is at or below this get depth 0.
pub const ALPHA_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Added to both diagonal entries of each 2D covariance (pixels²).
    pub lowpass: f64,
    /// Upper clamp on per-splat alpha; `None` disables it.
    pub alpha_clamp: Option<f64>,
    /// Compositing stops before transmittance would drop below this.
    pub min_transmittance: f64,
    /// Footprint half-extent in standard deviations. Splats whose footprint
    /// misses the image are culled and pixels outside it are skipped;
    /// `None` evaluates every splat at every pixel.
    pub cutoff_sigma: Option<f64>,
    /// Contributions with alpha below this are skipped.
    pub min_alpha: f64,
    /// The projection Jacobian is evaluated with `x/z` and `y/z` clamped to
    /// this multiple of the half field of view. `None` uses the exact
    /// Jacobian everywhere.
    pub jacobian_guard: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            lowpass: 0.3,
            alpha_clamp: Some(0.99),
            min_transmittance: 1e-4,
            cutoff_sigma: Some(3.0),
            min_alpha: 1.0 / 255.0,
            jacobian_guard: Some(1.3),
        }
    }
}

impl RenderOptions {
    /// Default compositing without footprint truncation or the small-alpha
    /// skip, so the rendered buffers are smooth in every parameter away from
    /// the alpha clamp and early termination.
    pub fn untruncated() -> Self {
        Self {
            cutoff_sigma: None,
            min_alpha: 0.0,
            ..Self::default()
        }
    }
}
