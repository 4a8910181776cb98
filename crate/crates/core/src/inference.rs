//! Open-vocabulary segmentation and text query over a rendered view.
//!
//! Segmentation scores every (mask, class) pair by a temperature softmax of
//! cosine similarities taken across masks, keeps masks that survive
//! non-maximum suppression, and labels each pixel with the class whose
//! relevance-weighted mask sum is largest. Query mode thresholds a
//! canonical-phrase relevance per mask and unions the survivors.

use serde::{Deserialize, Serialize};

use crate::fields::RenderedView;
use crate::math;
use crate::tokens::{mask_logits, Tokens};
use crate::{Error, Result};

/// Named unit embeddings, one row per class or phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    pub names: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
}

impl TextEmbeddingSet {
    pub fn new(names: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        let set = Self { names, embeddings };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embeddings.is_empty() {
            return Err(Error::Invalid("text embedding set is empty".into()));
        }
        if self.names.len() != self.embeddings.len() {
            return Err(Error::Shape(format!(
                "{} names for {} embeddings",
                self.names.len(),
                self.embeddings.len()
            )));
        }
        let d = self.dim();
        for (c, e) in self.embeddings.iter().enumerate() {
            if e.len() != d {
                return Err(Error::Shape(format!("embedding {c} has dimension {}, expected {d}", e.len())));
            }
            if (math::norm(e) - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("embedding {c} (`{}`) is not unit length", self.names[c])));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, |e| e.len())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Per-pixel labels: `-1` for background, otherwise a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<i32>,
    pub scores: Vec<f64>,
    /// Masks that survived suppression.
    pub kept: Vec<usize>,
}

impl SegmentationMap {
    /// True when suppression left nothing and every pixel is background.
    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Softmax temperature for relevance across masks.
    pub tau: f64,
    pub iou_thresh: f64,
    pub smooth_k: usize,
    /// Pixels with accumulated opacity below this are background.
    pub background_opacity: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            iou_thresh: 0.8,
            smooth_k: 10,
            background_opacity: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    /// Threshold on min-max normalized relevance.
    pub rel_thresh: f64,
    /// Masks whose peak probability is below this are dropped.
    pub act_thresh: f64,
    /// Absolute floor on raw relevance; 0.5 means "no closer to the query
    /// than to a canonical phrase".
    pub min_relevance: f64,
    pub smooth_k: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            rel_thresh: 0.9,
            act_thresh: 0.5,
            min_relevance: 0.55,
            smooth_k: 10,
        }
    }
}

/// `n_k x C` relevance: for each class, a softmax over masks of
/// `cos(S_i, F_c) / tau`. Zero tokens get probability zero.
pub fn relevance(semantics: &[f64], d_s: usize, texts: &TextEmbeddingSet, tau: f64) -> Result<Vec<f64>> {
    if d_s == 0 || !semantics.len().is_multiple_of(d_s) || texts.dim() != d_s {
        return Err(Error::Shape(format!(
            "semantic tokens of width {d_s} against text embeddings of width {}",
            texts.dim()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let n_k = semantics.len() / d_s;
    let c_count = texts.len();
    let mut p = vec![0.0; n_k * c_count];
    for (c, text) in texts.embeddings.iter().enumerate() {
        let raw: Vec<f64> = semantics
            .chunks_exact(d_s)
            .map(|s| math::cosine(s, text).map_or(f64::NEG_INFINITY, |v| v / tau))
            .collect();
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let exps: Vec<f64> = raw.iter().map(|&r| (r - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (i, e) in exps.iter().enumerate() {
            p[i * c_count + c] = e / z;
        }
    }
    Ok(p)
}

fn binarize(m: &[f64]) -> Vec<bool> {
    m.iter().map(|&v| v >= 0.5).collect()
}

fn binary_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy suppression by descending score (lower index first on ties). A
/// mask is dropped when its binarized IoU with an already kept mask exceeds
/// `iou_thresh`. Returns kept indices in selection order.
pub fn nms(mask_probs: &[f64], pixels: usize, scores: &[f64], iou_thresh: f64) -> Result<Vec<usize>> {
    if mask_probs.len() != scores.len() * pixels {
        return Err(Error::Shape(format!(
            "{} mask values for {} scores of {} pixels",
            mask_probs.len(),
            scores.len(),
            pixels
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("nms score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let binary: Vec<Vec<bool>> = mask_probs.chunks_exact(pixels.max(1)).map(binarize).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| binary_iou(&binary[i], &binary[k]) <= iou_thresh) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Box mean filter of side `k` with zero padding. For even `k` the window
/// spans offsets `-k/2 ..= k - 1 - k/2`.
pub fn smooth(mask: &[f64], height: usize, width: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Invalid("smoothing window must be at least 1".into()));
    }
    if mask.len() != height * width {
        return Err(Error::Shape(format!("mask has {} values, expected {height}x{width}", mask.len())));
    }
    if k == 1 {
        return Ok(mask.to_vec());
    }
    // summed-area table with a zero first row and column
    let sw = width + 1;
    let mut sat = vec![0.0; (height + 1) * sw];
    for r in 0..height {
        let mut row_sum = 0.0;
        for c in 0..width {
            row_sum += mask[r * width + c];
            sat[(r + 1) * sw + c + 1] = sat[r * sw + c + 1] + row_sum;
        }
    }
    let lo = (k / 2) as isize;
    let hi = (k - 1 - k / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize) as usize;
    let area = (k * k) as f64;
    let mut out = vec![0.0; mask.len()];
    for r in 0..height {
        let r0 = clamp(r as isize - lo, height);
        let r1 = clamp(r as isize + hi + 1, height);
        for c in 0..width {
            let c0 = clamp(c as isize - lo, width);
            let c1 = clamp(c as isize + hi + 1, width);
            let s = sat[r1 * sw + c1] - sat[r0 * sw + c1] - sat[r1 * sw + c0] + sat[r0 * sw + c0];
            out[r * width + c] = s / area;
        }
    }
    Ok(out)
}

fn view_probs(view: &RenderedView, tokens: &Tokens) -> Result<Vec<f64>> {
    if view.d_m != tokens.d_m {
        return Err(Error::Shape(format!(
            "view features have d_m={} but tokens have d_m={}",
            view.d_m, tokens.d_m
        )));
    }
    Ok(mask_logits(&view.feature, view.height, view.width, view.d_m, &tokens.queries)?.probabilities())
}

/// Labels every pixel of a rendered view.
pub fn segment(
    view: &RenderedView,
    tokens: &Tokens,
    texts: &TextEmbeddingSet,
    cfg: &SegmentConfig,
) -> Result<SegmentationMap> {
    let probs = view_probs(view, tokens)?;
    let p = relevance(&tokens.semantics, tokens.d_s, texts, cfg.tau)?;
    segment_probs(view, &probs, &p, texts.len(), cfg)
}

/// [`segment`] from precomputed mask probabilities (`n_k x pixels`) and
/// relevance (`n_k x C`).
pub fn segment_probs(
    view: &RenderedView,
    probs: &[f64],
    p: &[f64],
    classes: usize,
    cfg: &SegmentConfig,
) -> Result<SegmentationMap> {
    let (h, w) = (view.height, view.width);
    let hw = h * w;
    let n_k = if classes == 0 { 0 } else { p.len() / classes };
    if probs.len() != n_k * hw {
        return Err(Error::Shape(format!("{} mask values for {n_k} masks of {hw} pixels", probs.len())));
    }
    let keep_scores: Vec<f64> = (0..n_k)
        .map(|i| p[i * classes..(i + 1) * classes].iter().copied().fold(0.0, f64::max))
        .collect();
    let kept = nms(probs, hw, &keep_scores, cfg.iou_thresh)?;

    let mut votes = vec![0.0; hw * classes];
    for &i in &kept {
        let m = smooth(&probs[i * hw..(i + 1) * hw], h, w, cfg.smooth_k)?;
        let row = &p[i * classes..(i + 1) * classes];
        for (u, &mu) in m.iter().enumerate() {
            if mu == 0.0 {
                continue;
            }
            for (v, &pc) in votes[u * classes..(u + 1) * classes].iter_mut().zip(row) {
                *v += pc * mu;
            }
        }
    }
    let mut labels = vec![-1; hw];
    let mut scores = vec![0.0; hw];
    for u in 0..hw {
        let (best, score) = votes[u * classes..(u + 1) * classes]
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc });
        scores[u] = score.max(0.0);
        if view.accum_opacity[u] >= cfg.background_opacity && score >= 1e-6 {
            labels[u] = best as i32;
        }
    }
    Ok(SegmentationMap {
        height: h,
        width: w,
        labels,
        scores,
        kept,
    })
}

/// Canonical-phrase relevance of a token to a query:
/// `min_k exp(s.q) / (exp(s.q) + exp(s.c_k))`. A zero token scores 0; with no
/// canonicals the minimum over an empty set is 1.
pub fn lerf_relevance(token: &[f64], query: &[f64], canonicals: &[Vec<f64>]) -> f64 {
    if math::norm(token) == 0.0 {
        return 0.0;
    }
    let sq = math::dot(token, query);
    canonicals
        .iter()
        .map(|c| {
            let sc = math::dot(token, c);
            // exp(sq) / (exp(sq) + exp(sc)) written as a logistic for stability
            math::sigmoid(sq - sc)
        })
        .fold(1.0, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    /// Raw relevance per token.
    pub relevance: Vec<f64>,
    pub survivors: Vec<usize>,
}

/// Binary mask of everything relevant to `query`. Empty when no mask passes
/// both relevance thresholds and the activation threshold.
pub fn query_object(
    view: &RenderedView,
    tokens: &Tokens,
    query: &[f64],
    canonicals: &TextEmbeddingSet,
    cfg: &QueryConfig,
) -> Result<QueryResult> {
    if query.len() != tokens.d_s || canonicals.dim() != tokens.d_s {
        return Err(Error::Shape(format!(
            "query of width {} and canonicals of width {} against tokens of width {}",
            query.len(),
            canonicals.dim(),
            tokens.d_s
        )));
    }
    let probs = view_probs(view, tokens)?;
    let rel: Vec<f64> = (0..tokens.n_k)
        .map(|i| lerf_relevance(tokens.semantic(i), query, &canonicals.embeddings))
        .collect();
    query_probs(view.height, view.width, &probs, rel, cfg)
}

/// [`query_object`] from precomputed probabilities and raw relevance.
pub fn query_probs(height: usize, width: usize, probs: &[f64], rel: Vec<f64>, cfg: &QueryConfig) -> Result<QueryResult> {
    let hw = height * width;
    if probs.len() != rel.len() * hw {
        return Err(Error::Shape(format!("{} mask values for {} masks of {hw} pixels", probs.len(), rel.len())));
    }
    let lo = rel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let survivors: Vec<usize> = (0..rel.len())
        .filter(|&i| {
            let normalized = if span > 0.0 { (rel[i] - lo) / span } else { 1.0 };
            let peak = probs[i * hw..(i + 1) * hw].iter().copied().fold(0.0, f64::max);
            normalized >= cfg.rel_thresh && rel[i] >= cfg.min_relevance && peak >= cfg.act_thresh
        })
        .collect();
    let mut union = vec![0.0; hw];
    for &i in &survivors {
        for (u, &v) in union.iter_mut().zip(&probs[i * hw..(i + 1) * hw]) {
            *u = f64::max(*u, v);
        }
    }
    let hard: Vec<f64> = union.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let mask = binarize(&smooth(&hard, height, width, cfg.smooth_k)?);
    Ok(QueryResult {
        height,
        width,
        mask,
        relevance: rel,
        survivors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    fn texts(rows: Vec<Vec<f64>>) -> TextEmbeddingSet {
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        TextEmbeddingSet::new(names, rows).unwrap()
    }

    #[test]
    fn identical_tokens_share_relevance() {
        let s = [0.6, 0.8, 0.0].repeat(4);
        let t = texts(vec![unit(3, 0), unit(3, 2)]);
        let p = relevance(&s, 3, &t, 0.1).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn columns_sum_to_one_and_zero_tokens_are_excluded() {
        let s = [vec![1.0, 0.0], vec![0.0, 0.0], vec![0.6, 0.8]].concat();
        let t = texts(vec![unit(2, 0), unit(2, 1)]);
        let p = relevance(&s, 2, &t, 0.1).unwrap();
        for c in 0..2 {
            let col: f64 = (0..3).map(|i| p[i * 2 + c]).sum();
            assert!((col - 1.0).abs() < 1e-9);
            assert_eq!(p[2 + c], 0.0);
        }
    }

    #[test]
    fn sharp_temperature_picks_the_matching_token() {
        let s = [unit(3, 0), unit(3, 1), unit(3, 2)].concat();
        let t = texts(vec![unit(3, 0)]);
        let p = relevance(&s, 3, &t, 1e-3).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
    }

    #[test]
    fn nms_examples() {
        let a = vec![1.0, 1.0, 0.0, 0.0];
        let probs = [a.clone(), a].concat();
        assert_eq!(nms(&probs, 4, &[0.8, 0.9], 0.8).unwrap(), vec![1]);

        let disjoint = [vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]].concat();
        assert_eq!(nms(&disjoint, 4, &[0.1, 0.2, 0.3], 0.8).unwrap(), vec![2, 1, 0]);

        // 2x1 inside 2x2: IoU 0.5
        let nested = [vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 0.0, 1.0, 0.0]].concat();
        let mut kept = nms(&nested, 4, &[0.9, 0.8], 0.8).unwrap();
        kept.sort();
        assert_eq!(kept, vec![0, 1]);
    }

    #[test]
    fn smooth_examples() {
        let m = vec![0.7; 30 * 30];
        let s = smooth(&m, 30, 30, 10).unwrap();
        for r in 10..20 {
            for c in 10..20 {
                assert!((s[r * 30 + c] - 0.7).abs() < 1e-12);
            }
        }
        assert_eq!(smooth(&m, 30, 30, 1).unwrap(), m);

        let mut one = vec![0.0; 144];
        one[5 * 12 + 5] = 1.0;
        let s = smooth(&one, 12, 12, 10).unwrap();
        let covered = s.iter().filter(|&&v| (v - 0.01).abs() < 1e-15).count();
        assert_eq!(covered, 100);
        assert!(s.iter().all(|&v| v == 0.0 || (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn lerf_examples() {
        let s = unit(3, 0);
        let canon = vec![unit(3, 1), unit(3, 2)];
        let e = std::f64::consts::E;
        assert!((lerf_relevance(&s, &s, &canon) - e / (e + 1.0)).abs() < 1e-12);
        assert!((lerf_relevance(&s, &unit(3, 1), std::slice::from_ref(&s)) - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert_eq!(lerf_relevance(&s, &unit(3, 1), &[unit(3, 1)]), 0.5);
        assert_eq!(lerf_relevance(&[0.0; 3], &s, &canon), 0.0);
    }

    fn flat_view(h: usize, w: usize, opacity: f64) -> RenderedView {
        let mut v = RenderedView::zeros(h, w, 1);
        v.accum_opacity.iter_mut().for_each(|a| *a = opacity);
        v
    }

    #[test]
    fn single_mask_vote() {
        let view = flat_view(1, 2, 1.0);
        let probs = vec![1.0, 0.0];
        let p = vec![0.9, 0.1];
        let cfg = SegmentConfig {
            smooth_k: 1,
            ..SegmentConfig::default()
        };
        let map = segment_probs(&view, &probs, &p, 2, &cfg).unwrap();
        assert_eq!(map.labels, vec![0, -1]);
    }

    #[test]
    fn transparent_view_is_background() {
        let view = flat_view(2, 2, 0.0);
        let probs = vec![1.0; 4];
        let map = segment_probs(&view, &probs, &[1.0], 1, &SegmentConfig::default()).unwrap();
        assert!(map.labels.iter().all(|&l| l == -1));
    }

    #[test]
    fn blank_query() {
        let probs = vec![0.9; 4];
        let cfg = QueryConfig {
            smooth_k: 1,
            ..QueryConfig::default()
        };
        let q = query_probs(2, 2, &probs, vec![0.5], &cfg).unwrap();
        assert!(q.mask.iter().all(|&b| !b));
        let q = query_probs(2, 2, &probs, vec![0.73], &cfg).unwrap();
        assert!(q.mask.iter().all(|&b| b));
    }
}
