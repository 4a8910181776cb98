use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::camera::CameraModel;
use super::grid::Aabb;
use crate::math::Vec3;
use crate::{Error, Result};

/// Footprints are truncated at this many pixel-space standard deviations.
pub const FOOTPRINT_CUTOFF: f64 = 3.0;
/// Upper clamp on per-splat pixel opacity.
pub const MAX_ALPHA: f64 = 0.999;

/// Isotropic Gaussian splats with view-independent color and features.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatCloud {
    d_m: usize,
    pub positions: Vec<f64>,
    pub radii: Vec<f64>,
    /// Pre-sigmoid opacity per splat.
    pub opacity_raw: Vec<f64>,
    /// Pre-sigmoid color per splat.
    pub colors: Vec<f64>,
    pub mask_features: Vec<f64>,
    pub background_feature: Vec<f64>,
}

impl SplatCloud {
    pub fn new(
        d_m: usize,
        positions: Vec<f64>,
        radii: Vec<f64>,
        opacity_raw: Vec<f64>,
        colors: Vec<f64>,
        mask_features: Vec<f64>,
        background_feature: Vec<f64>,
    ) -> Result<Self> {
        let n = radii.len();
        if n == 0 {
            return Err(Error::Invalid("splat cloud must contain at least one splat".into()));
        }
        if d_m == 0 {
            return Err(Error::Invalid("mask feature dimension must be >= 1".into()));
        }
        if positions.len() != 3 * n
            || opacity_raw.len() != n
            || colors.len() != 3 * n
            || mask_features.len() != d_m * n
            || background_feature.len() != d_m
        {
            return Err(Error::Shape("splat parameter buffers disagree on count".into()));
        }
        let cloud = Self {
            d_m,
            positions,
            radii,
            opacity_raw,
            colors,
            mask_features,
            background_feature,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Uniformly scattered splats inside `bounds` with a shared radius.
    pub fn scattered<R: Rng + ?Sized>(
        count: usize,
        bounds: Aabb,
        radius: f64,
        d_m: usize,
        opacity_raw: f64,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut positions = Vec::with_capacity(3 * count);
        for _ in 0..count {
            for a in 0..3 {
                positions.push(bounds.min[a] + rng.random::<f64>() * (bounds.max[a] - bounds.min[a]));
            }
        }
        let colors = (0..3 * count).map(|_| normal.sample(rng)).collect();
        let mask_features = (0..d_m * count).map(|_| normal.sample(rng)).collect();
        Self::new(
            d_m,
            positions,
            vec![radius; count],
            vec![opacity_raw; count],
            colors,
            mask_features,
            vec![0.0; d_m],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Invalid("splat radii must be positive".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.positions)
            || !finite(&self.opacity_raw)
            || !finite(&self.colors)
            || !finite(&self.mask_features)
            || !finite(&self.background_feature)
        {
            return Err(Error::NonFinite("splat parameters".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.radii.len()
    }
    pub fn d_m(&self) -> usize {
        self.d_m
    }

    pub fn position(&self, i: usize) -> Vec3 {
        [self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2]]
    }
}

/// Per-pixel front-to-back contributor lists for one camera. Depends only on
/// splat positions and radii, which are not optimized, so one raster serves
/// both the forward and backward pass.
#[derive(Debug, Clone)]
pub struct SplatRaster {
    pub(crate) height: usize,
    pub(crate) width: usize,
    /// CSR offsets into `entries`, length `height * width + 1`.
    pub(crate) offsets: Vec<usize>,
    /// `(splat index, gaussian falloff)` sorted by depth within a pixel.
    pub(crate) entries: Vec<(u32, f64)>,
}

impl SplatRaster {
    pub fn build(cloud: &SplatCloud, camera: &CameraModel) -> Self {
        let (w, h) = (camera.width(), camera.height());
        let mut buckets: Vec<Vec<(f64, u32, f64)>> = vec![Vec::new(); w * h];
        for s in 0..cloud.count() {
            let (x, y, depth) = camera.project(cloud.position(s));
            if !(depth > camera.near()) {
                continue;
            }
            let r_px = cloud.radii[s] * camera.focal_px() / depth;
            let reach = FOOTPRINT_CUTOFF * r_px;
            let c0 = (x - reach - 0.5).ceil().max(0.0);
            let c1 = (x + reach - 0.5).floor().min(w as f64 - 1.0);
            let r0 = (y - reach - 0.5).ceil().max(0.0);
            let r1 = (y + reach - 0.5).floor().min(h as f64 - 1.0);
            if c0 > c1 || r0 > r1 {
                continue;
            }
            let inv = 1.0 / (2.0 * r_px * r_px);
            for row in r0 as usize..=r1 as usize {
                for col in c0 as usize..=c1 as usize {
                    let dx = col as f64 + 0.5 - x;
                    let dy = row as f64 + 0.5 - y;
                    let d2 = dx * dx + dy * dy;
                    if d2 > reach * reach {
                        continue;
                    }
                    buckets[row * w + col].push((depth, s as u32, (-d2 * inv).exp()));
                }
            }
        }
        let mut offsets = Vec::with_capacity(w * h + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for mut b in buckets {
            b.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            entries.extend(b.into_iter().map(|(_, s, g)| (s, g)));
            offsets.push(entries.len());
        }
        Self {
            height: h,
            width: w,
            offsets,
            entries,
        }
    }

    pub fn pixel(&self, p: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }
}
