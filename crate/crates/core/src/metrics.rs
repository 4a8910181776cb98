//! Label-map quality: per-class IoU, boundary IoU and pixel accuracy.
//!
//! Label `-1` is background and never averaged as a class. Counts pool over
//! every view added to an [`Evaluator`] before ratios are taken.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_shapes(pred: &[i32], gt: &[i32], height: usize, width: usize) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != height * width {
        return Err(Error::Shape(format!(
            "label maps of {} and {} pixels for a {height}x{width} view",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn check_classes(labels: &[i32], classes: usize) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&l| l < -1 || l >= classes as i32) {
        return Err(Error::Invalid(format!("label {bad} outside -1..{classes}")));
    }
    Ok(())
}

/// Pixels of `mask` with a 4-neighbour outside it. The image border does
/// not count as a change.
pub fn edge(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..height {
        for c in 0..width {
            let u = r * width + c;
            if !mask[u] {
                continue;
            }
            let outside = (r > 0 && !mask[u - width])
                || (r + 1 < height && !mask[u + width])
                || (c > 0 && !mask[u - 1])
                || (c + 1 < width && !mask[u + 1]);
            out[u] = outside;
        }
    }
    out
}

/// Pixels within Chebyshev distance `d` of the edge of `mask`.
pub fn boundary_band(mask: &[bool], height: usize, width: usize, d: usize) -> Vec<bool> {
    let e = edge(mask, height, width);
    // separable square dilation: rows then columns
    let mut rows = vec![false; mask.len()];
    for r in 0..height {
        for c in 0..width {
            if e[r * width + c] {
                for cc in c.saturating_sub(d)..(c + d + 1).min(width) {
                    rows[r * width + cc] = true;
                }
            }
        }
    }
    let mut out = vec![false; mask.len()];
    for r in 0..height {
        for c in 0..width {
            if rows[r * width + c] {
                for rr in r.saturating_sub(d)..(r + d + 1).min(height) {
                    out[rr * width + c] = true;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    inter: u64,
    union: u64,
}

impl Counts {
    fn ratio(self) -> Option<f64> {
        (self.union > 0).then(|| self.inter as f64 / self.union as f64)
    }
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Per-class IoU (`None` for classes absent from both maps) and their mean.
pub fn miou(pred: &[i32], gt: &[i32], classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let mut ev = Evaluator::new(classes, 2);
    ev.add_view(pred, gt, 1, pred.len())?;
    let per = ev.iou.iter().map(|c| c.ratio()).collect::<Vec<_>>();
    let mean = mean_present(&per);
    Ok((per, mean))
}

/// IoU of the per-class boundary bands of width `d`.
pub fn boundary_iou(
    pred: &[i32],
    gt: &[i32],
    height: usize,
    width: usize,
    classes: usize,
    d: usize,
) -> Result<(Vec<Option<f64>>, f64)> {
    let mut ev = Evaluator::new(classes, d);
    ev.add_view(pred, gt, height, width)?;
    let per = ev.biou.iter().map(|c| c.ratio()).collect::<Vec<_>>();
    let mean = mean_present(&per);
    Ok((per, mean))
}

/// Fraction of labelled ground-truth pixels predicted correctly. The flag is
/// set when the ground truth has no labelled pixels; the value is then 1.
pub fn accuracy(pred: &[i32], gt: &[i32]) -> Result<(f64, bool)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("label maps of {} and {} pixels", pred.len(), gt.len())));
    }
    let (mut hit, mut total) = (0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        if g >= 0 {
            total += 1;
            hit += (p == g) as u64;
        }
    }
    Ok(if total == 0 { (1.0, true) } else { (hit as f64 / total as f64, false) })
}

/// Pools metric counts over views.
#[derive(Debug, Clone)]
pub struct Evaluator {
    classes: usize,
    band: usize,
    iou: Vec<Counts>,
    biou: Vec<Counts>,
    hit: u64,
    labelled: u64,
    views: usize,
}

impl Evaluator {
    pub fn new(classes: usize, band: usize) -> Self {
        Self {
            classes,
            band,
            iou: vec![Counts::default(); classes],
            biou: vec![Counts::default(); classes],
            hit: 0,
            labelled: 0,
            views: 0,
        }
    }

    pub fn add_view(&mut self, pred: &[i32], gt: &[i32], height: usize, width: usize) -> Result<()> {
        check_shapes(pred, gt, height, width)?;
        check_classes(pred, self.classes)?;
        check_classes(gt, self.classes)?;
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= 0 {
                let c = &mut self.iou[p as usize];
                c.union += 1;
                c.inter += (p == g) as u64;
            }
            if g >= 0 && g != p {
                self.iou[g as usize].union += 1;
            }
            if g >= 0 {
                self.labelled += 1;
                self.hit += (p == g) as u64;
            }
        }
        for c in 0..self.classes as i32 {
            let pm: Vec<bool> = pred.iter().map(|&l| l == c).collect();
            let gm: Vec<bool> = gt.iter().map(|&l| l == c).collect();
            if !pm.contains(&true) && !gm.contains(&true) {
                continue;
            }
            let pb = boundary_band(&pm, height, width, self.band);
            let gb = boundary_band(&gm, height, width, self.band);
            let counts = &mut self.biou[c as usize];
            for (&a, &b) in pb.iter().zip(&gb) {
                counts.inter += (a && b) as u64;
                counts.union += (a || b) as u64;
            }
        }
        self.views += 1;
        Ok(())
    }

    pub fn report(&self, class_names: &[String]) -> EvalReport {
        let per_class_iou: Vec<Option<f64>> = self.iou.iter().map(|c| c.ratio()).collect();
        let per_class_biou: Vec<Option<f64>> = self.biou.iter().map(|c| c.ratio()).collect();
        let (acc, acc_undefined) = if self.labelled == 0 {
            (1.0, true)
        } else {
            (self.hit as f64 / self.labelled as f64, false)
        };
        EvalReport {
            class_names: class_names.to_vec(),
            miou: mean_present(&per_class_iou),
            mbiou: mean_present(&per_class_biou),
            per_class_iou,
            per_class_biou,
            acc,
            acc_undefined,
            n_views: self.views,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `None` where a class appears in neither prediction nor ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_biou: Vec<Option<f64>>,
    pub miou: f64,
    pub mbiou: f64,
    pub acc: f64,
    /// Ground truth had no labelled pixels.
    pub acc_undefined: bool,
    pub n_views: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "scene,n_views,miou,mbiou,acc";

    pub fn csv_row(&self, scene: &str) -> String {
        format!("{scene},{},{:.6},{:.6},{:.6}", self.n_views, self.miou, self.mbiou, self.acc)
    }
}
