//! Scene representations and differentiable rendering.
//!
//! Both backends composite samples front to back with
//! `w_i = T_i * alpha_i`, `T_i = prod_{j<i} (1 - alpha_j)`. The grid backend
//! gets `alpha_i = 1 - exp(-delta_i * sigma_i)` from ray marching; the splat
//! backend gets it from a Gaussian footprint. Color, mask features and
//! accumulated opacity all use the same weights.

mod camera;
mod grid;
mod render;
mod splat;

pub use camera::{generate_rays, sample_ray, CameraModel, Ray, RaySample};
pub use grid::{query_grid, Aabb, GridField, PointQuery, Stencil};
pub use render::{
    backprop_view, render_ray, render_splats, render_view, splat_pixel_weights, FieldGrads,
    RayRender, RenderOptions, RenderPlan, RenderedView, SampleWeight, SamplePlan,
};
pub use splat::{SplatCloud, SplatRaster, FOOTPRINT_CUTOFF, MAX_ALPHA};

use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Grid,
    Splat,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Grid => "grid",
            Backend::Splat => "splat",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Backend::Grid),
            "splat" => Ok(Backend::Splat),
            other => Err(crate::Error::Invalid(format!("unknown backend `{other}` (expected grid|splat)"))),
        }
    }
}

/// Either scene backend. Parameter groups line up across backends: the
/// geometry group is raw density (grid) or raw opacity (splats).
#[derive(Debug, Clone, PartialEq)]
pub enum FieldModel {
    Grid(GridField),
    Splat(SplatCloud),
}

/// Borrowed parameter groups of a field.
pub struct FieldParamsMut<'a> {
    pub geometry: &'a mut [f64],
    pub color: &'a mut [f64],
    pub feature: &'a mut [f64],
    pub background: &'a mut [f64],
}

impl FieldModel {
    pub fn backend(&self) -> Backend {
        match self {
            FieldModel::Grid(_) => Backend::Grid,
            FieldModel::Splat(_) => Backend::Splat,
        }
    }

    pub fn d_m(&self) -> usize {
        match self {
            FieldModel::Grid(g) => g.d_m(),
            FieldModel::Splat(s) => s.d_m(),
        }
    }

    pub fn params_mut(&mut self) -> FieldParamsMut<'_> {
        match self {
            FieldModel::Grid(g) => FieldParamsMut {
                geometry: &mut g.density,
                color: &mut g.color,
                feature: &mut g.mask_feature,
                background: &mut g.background_feature,
            },
            FieldModel::Splat(s) => FieldParamsMut {
                geometry: &mut s.opacity_raw,
                color: &mut s.colors,
                feature: &mut s.mask_features,
                background: &mut s.background_feature,
            },
        }
    }

    /// `(geometry, color, feature, background)` parameter slices.
    pub fn params(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        match self {
            FieldModel::Grid(g) => (&g.density, &g.color, &g.mask_feature, &g.background_feature),
            FieldModel::Splat(s) => (&s.opacity_raw, &s.colors, &s.mask_features, &s.background_feature),
        }
    }

    pub fn zero_grads(&self) -> FieldGrads {
        let (g, c, f, b) = self.params();
        FieldGrads {
            geometry: vec![0.0; g.len()],
            color: vec![0.0; c.len()],
            feature: vec![0.0; f.len()],
            background: vec![0.0; b.len()],
        }
    }

    /// Builds the per-view rendering plan: ray samples for the grid, a
    /// rasterized contributor list for splats.
    pub fn plan<R: rand::Rng + ?Sized>(&self, camera: &CameraModel, opts: &RenderOptions, rng: &mut R) -> RenderPlan {
        match self {
            FieldModel::Grid(_) => RenderPlan::Rays(SamplePlan::for_camera(camera, opts.n_samples, opts.jitter, rng)),
            FieldModel::Splat(s) => RenderPlan::Raster(SplatRaster::build(s, camera)),
        }
    }

    pub fn render(&self, plan: &RenderPlan, opts: &RenderOptions) -> Result<RenderedView> {
        render::render_plan(self, plan, opts)
    }

    pub fn backprop(&self, plan: &RenderPlan, opts: &RenderOptions, upstream: &RenderedView) -> Result<FieldGrads> {
        render::backprop_plan(self, plan, opts, upstream)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModel::Grid(g) => g.validate(),
            FieldModel::Splat(s) => s.validate(),
        }
    }
}
