//! Scene-level query and semantic tokens.
//!
//! Token `i` is produced by two small MLPs applied to a Fourier encoding of
//! its integer id, so tokens depend on nothing but the id. Query tokens
//! select a mask from the rendered feature map (`logit = F(u) . Q_i`);
//! semantic tokens are unit-normalized and carry the mask's embedding.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::math;
use crate::{Error, Result};

/// Fourier features of `id / n_k`: `[sin(2^b 2 pi x), cos(2^b 2 pi x)]` per band.
pub fn fourier_encode(id: usize, n_k: usize, num_freqs: usize) -> Result<Vec<f64>> {
    if id >= n_k {
        return Err(Error::Invalid(format!("token id {id} out of range for {n_k} tokens")));
    }
    let x = id as f64 / n_k as f64;
    let mut out = Vec::with_capacity(2 * num_freqs);
    for b in 0..num_freqs {
        let angle = 2.0 * PI * x * (1u64 << b) as f64;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Two-layer perceptron with a ReLU hidden layer.
///
/// Parameters are stored flat: `w1 [hidden x in]`, `b1 [hidden]`,
/// `w2 [out x hidden]`, `b2 [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn param_count(n_in: usize, n_hidden: usize, n_out: usize) -> usize {
        n_hidden * n_in + n_hidden + n_out * n_hidden + n_out
    }

    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
            params: vec![0.0; Self::param_count(n_in, n_hidden, n_out)],
        }
    }

    /// Fan-in scaled normal weights (`2 / fan_in` before the ReLU,
    /// `1 / fan_in` after it), zero biases.
    pub fn kaiming<R: Rng + ?Sized>(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(n_in, n_hidden, n_out);
        let l1 = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).unwrap();
        let l2 = Normal::new(0.0, (1.0 / n_hidden as f64).sqrt()).unwrap();
        let (w1, rest) = mlp.params.split_at_mut(n_hidden * n_in);
        for w in w1.iter_mut() {
            *w = l1.sample(rng);
        }
        let w2 = &mut rest[n_hidden..n_hidden + n_out * n_hidden];
        for w in w2.iter_mut() {
            *w = l2.sample(rng);
        }
        mlp
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_out * self.n_hidden;
        (b1, w2, b2)
    }

    /// Returns `(hidden pre-activation, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.n_hidden)
            .map(|h| p[ob1 + h] + math::dot(&p[h * self.n_in..(h + 1) * self.n_in], x))
            .collect();
        let out = (0..self.n_out)
            .map(|o| {
                let row = &p[ow2 + o * self.n_hidden..ow2 + (o + 1) * self.n_hidden];
                p[ob2 + o] + row.iter().zip(&hidden).map(|(w, h)| w * h.max(0.0)).sum::<f64>()
            })
            .collect();
        (hidden, out)
    }

    /// Accumulates parameter gradients for one sample into `grads`.
    pub fn backward(&self, x: &[f64], hidden: &[f64], g_out: &[f64], grads: &mut [f64]) {
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        let mut g_hidden = vec![0.0; self.n_hidden];
        for o in 0..self.n_out {
            let g = g_out[o];
            if g == 0.0 {
                continue;
            }
            grads[ob2 + o] += g;
            for h in 0..self.n_hidden {
                grads[ow2 + o * self.n_hidden + h] += g * hidden[h].max(0.0);
                g_hidden[h] += g * p[ow2 + o * self.n_hidden + h];
            }
        }
        for h in 0..self.n_hidden {
            if hidden[h] <= 0.0 || g_hidden[h] == 0.0 {
                continue;
            }
            let g = g_hidden[h];
            grads[ob1 + h] += g;
            for (gw, xi) in grads[h * self.n_in..(h + 1) * self.n_in].iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenBank {
    pub n_k: usize,
    pub num_freqs: usize,
    pub d_m: usize,
    pub d_s: usize,
    pub query_mlp: Mlp,
    pub semantic_mlp: Mlp,
}

/// Evaluated tokens plus what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    pub n_k: usize,
    pub d_m: usize,
    pub d_s: usize,
    /// `n_k x d_m`
    pub queries: Vec<f64>,
    /// `n_k x d_s`, rows unit length (or zero when degenerate).
    pub semantics: Vec<f64>,
    /// Pre-normalization norm of each semantic row; zero flags a degenerate token.
    pub semantic_norms: Vec<f64>,
    encodings: Vec<Vec<f64>>,
    query_hidden: Vec<Vec<f64>>,
    semantic_hidden: Vec<Vec<f64>>,
}

impl Tokens {
    pub fn query(&self, i: usize) -> &[f64] {
        &self.queries[i * self.d_m..(i + 1) * self.d_m]
    }
    pub fn semantic(&self, i: usize) -> &[f64] {
        &self.semantics[i * self.d_s..(i + 1) * self.d_s]
    }
    pub fn is_degenerate(&self, i: usize) -> bool {
        self.semantic_norms[i] == 0.0
    }
}

/// Gradients for both token MLPs, laid out like [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrads {
    pub query_mlp: Vec<f64>,
    pub semantic_mlp: Vec<f64>,
}

impl TokenBank {
    pub fn new<R: Rng + ?Sized>(
        n_k: usize,
        num_freqs: usize,
        hidden: usize,
        d_m: usize,
        d_s: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_k == 0 || num_freqs == 0 || hidden == 0 || d_m == 0 || d_s == 0 {
            return Err(Error::Invalid("token bank dimensions must all be positive".into()));
        }
        let n_in = 2 * num_freqs;
        Ok(Self {
            n_k,
            num_freqs,
            d_m,
            d_s,
            query_mlp: Mlp::kaiming(n_in, hidden, d_m, rng),
            semantic_mlp: Mlp::kaiming(n_in, hidden, d_s, rng),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n_in = 2 * self.num_freqs;
        let q = &self.query_mlp;
        let s = &self.semantic_mlp;
        if q.n_in != n_in || s.n_in != n_in || q.n_out != self.d_m || s.n_out != self.d_s {
            return Err(Error::Shape("token MLP dimensions disagree with the bank".into()));
        }
        if q.params.len() != Mlp::param_count(q.n_in, q.n_hidden, q.n_out)
            || s.params.len() != Mlp::param_count(s.n_in, s.n_hidden, s.n_out)
        {
            return Err(Error::Shape("token MLP parameter buffers have the wrong length".into()));
        }
        if q.params.iter().chain(&s.params).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token MLP parameters".into()));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> TokenGrads {
        TokenGrads {
            query_mlp: vec![0.0; self.query_mlp.params.len()],
            semantic_mlp: vec![0.0; self.semantic_mlp.params.len()],
        }
    }

    /// Evaluates every token. Takes no view input: tokens are shared by all views.
    pub fn compute_tokens(&self) -> Tokens {
        let mut t = Tokens {
            n_k: self.n_k,
            d_m: self.d_m,
            d_s: self.d_s,
            queries: Vec::with_capacity(self.n_k * self.d_m),
            semantics: Vec::with_capacity(self.n_k * self.d_s),
            semantic_norms: Vec::with_capacity(self.n_k),
            encodings: Vec::with_capacity(self.n_k),
            query_hidden: Vec::with_capacity(self.n_k),
            semantic_hidden: Vec::with_capacity(self.n_k),
        };
        for i in 0..self.n_k {
            let enc = fourier_encode(i, self.n_k, self.num_freqs).expect("id < n_k");
            let (qh, q) = self.query_mlp.forward(&enc);
            let (sh, s) = self.semantic_mlp.forward(&enc);
            let n = math::norm(&s);
            t.queries.extend_from_slice(&q);
            t.semantics.extend(math::normalized(&s));
            t.semantic_norms.push(n);
            t.encodings.push(enc);
            t.query_hidden.push(qh);
            t.semantic_hidden.push(sh);
        }
        t
    }

    /// Backpropagates gradients on the query rows and on the normalized
    /// semantic rows into both MLPs.
    pub fn backward(&self, tokens: &Tokens, g_queries: &[f64], g_semantics: &[f64]) -> Result<TokenGrads> {
        if g_queries.len() != self.n_k * self.d_m || g_semantics.len() != self.n_k * self.d_s {
            return Err(Error::Shape("token gradient buffers do not match the bank".into()));
        }
        let mut grads = self.zero_grads();
        for i in 0..self.n_k {
            let gq = &g_queries[i * self.d_m..(i + 1) * self.d_m];
            if gq.iter().any(|&g| g != 0.0) {
                self.query_mlp
                    .backward(&tokens.encodings[i], &tokens.query_hidden[i], gq, &mut grads.query_mlp);
            }
            let n = tokens.semantic_norms[i];
            if n == 0.0 {
                continue;
            }
            let s = tokens.semantic(i);
            let gs = &g_semantics[i * self.d_s..(i + 1) * self.d_s];
            // d(u/|u|)/du = (I - s s^T) / |u|
            let proj = math::dot(s, gs);
            let g_raw: Vec<f64> = gs.iter().zip(s).map(|(g, si)| (g - si * proj) / n).collect();
            if g_raw.iter().any(|&g| g != 0.0) {
                self.semantic_mlp
                    .backward(&tokens.encodings[i], &tokens.semantic_hidden[i], &g_raw, &mut grads.semantic_mlp);
            }
        }
        Ok(grads)
    }
}

/// Mask logits `values[i, p] = feature[p] . Q_i`, token-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    pub n_k: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl MaskLogits {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self, i: usize) -> &[f64] {
        let hw = self.pixel_count();
        &self.values[i * hw..(i + 1) * hw]
    }

    /// Per-pixel mask probabilities `sigmoid(values)`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.values.iter().map(|&v| math::sigmoid(v)).collect()
    }
}

/// Dot product of every pixel feature with every query token.
pub fn mask_logits(feature: &[f64], height: usize, width: usize, d_m: usize, queries: &[f64]) -> Result<MaskLogits> {
    let hw = height * width;
    if feature.len() != hw * d_m {
        return Err(Error::Shape(format!(
            "feature map has {} values, expected {}x{}x{}",
            feature.len(),
            height,
            width,
            d_m
        )));
    }
    if d_m == 0 || !queries.len().is_multiple_of(d_m) {
        return Err(Error::Shape(format!(
            "query buffer of length {} is not a multiple of d_m={d_m}",
            queries.len()
        )));
    }
    let n_k = queries.len() / d_m;
    let mut values = vec![0.0; n_k * hw];
    for (i, q) in queries.chunks_exact(d_m).enumerate() {
        let row = &mut values[i * hw..(i + 1) * hw];
        for (p, v) in row.iter_mut().enumerate() {
            *v = math::dot(&feature[p * d_m..(p + 1) * d_m], q);
        }
    }
    Ok(MaskLogits {
        n_k,
        height,
        width,
        values,
    })
}

/// Backward of [`mask_logits`]: returns `(g_feature, g_queries)`.
pub fn mask_logits_backward(
    feature: &[f64],
    d_m: usize,
    queries: &[f64],
    g_logits: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if d_m == 0 || !feature.len().is_multiple_of(d_m) || !queries.len().is_multiple_of(d_m) {
        return Err(Error::Shape("feature/query buffers are not multiples of d_m".into()));
    }
    let hw = feature.len() / d_m;
    let n_k = queries.len() / d_m;
    if g_logits.len() != n_k * hw {
        return Err(Error::Shape(format!(
            "logit gradient has {} values, expected {}",
            g_logits.len(),
            n_k * hw
        )));
    }
    let mut g_feature = vec![0.0; feature.len()];
    let mut g_queries = vec![0.0; queries.len()];
    for i in 0..n_k {
        let q = &queries[i * d_m..(i + 1) * d_m];
        let gq = &mut g_queries[i * d_m..(i + 1) * d_m];
        for p in 0..hw {
            let g = g_logits[i * hw + p];
            if g == 0.0 {
                continue;
            }
            let f = &feature[p * d_m..(p + 1) * d_m];
            let gf = &mut g_feature[p * d_m..(p + 1) * d_m];
            for k in 0..d_m {
                gf[k] += g * q[k];
                gq[k] += g * f[k];
            }
        }
    }
    Ok((g_feature, g_queries))
}

/// Full token backward: logits and semantic gradients into MLP gradients and
/// a feature-map gradient.
pub fn backprop_tokens(
    bank: &TokenBank,
    tokens: &Tokens,
    feature: &[f64],
    g_logits: &[f64],
    g_semantics: &[f64],
) -> Result<(TokenGrads, Vec<f64>)> {
    let (g_feature, g_queries) = mask_logits_backward(feature, bank.d_m, &tokens.queries, g_logits)?;
    let grads = bank.backward(tokens, &g_queries, g_semantics)?;
    Ok((grads, g_feature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_of_zero() {
        let e = fourier_encode(0, 64, 3).unwrap();
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_period() {
        let e = fourier_encode(1, 4, 1).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_id() {
        assert!(fourier_encode(4, 4, 2).is_err());
    }

    #[test]
    fn default_encodings_are_distinct() {
        // Exhaustive pairwise check at the defaults (64 ids, 6 bands).
        let encs: Vec<_> = (0..64).map(|i| fourier_encode(i, 64, 6).unwrap()).collect();
        for a in 0..64 {
            for b in a + 1..64 {
                let d: f64 = encs[a].iter().zip(&encs[b]).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d > 1e-6, "ids {a} and {b} collide");
            }
        }
    }

    #[test]
    fn zero_mlp_gives_zero_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bank = TokenBank::new(4, 2, 8, 3, 5, &mut rng).unwrap();
        bank.query_mlp.params.iter_mut().for_each(|v| *v = 0.0);
        bank.semantic_mlp.params.iter_mut().for_each(|v| *v = 0.0);
        let t = bank.compute_tokens();
        assert!(t.queries.iter().all(|&v| v == 0.0));
        assert!(t.semantics.iter().all(|&v| v == 0.0));
        assert!((0..4).all(|i| t.is_degenerate(i)));
    }

    #[test]
    fn semantic_rows_unit_or_zero_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = TokenBank::new(16, 6, 64, 8, 12, &mut rng).unwrap();
        let a = bank.compute_tokens();
        let b = bank.compute_tokens();
        assert_eq!(a, b);
        for i in 0..16 {
            let n = math::norm(a.semantic(i));
            assert!((n - 1.0).abs() < 1e-9 || n == 0.0);
        }
    }

    #[test]
    fn logits_are_dot_products() {
        let feature = [3.0, 4.0].repeat(6);
        let l = mask_logits(&feature, 2, 3, 2, &[3.0, 4.0, 0.0, 0.0, -4.0, 3.0]).unwrap();
        assert!(l.mask(0).iter().all(|&v| v == 25.0));
        assert!(l.probabilities()[6..12].iter().all(|&p| p == 0.5));
        assert!(l.mask(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_reject_dim_mismatch() {
        assert!(mask_logits(&[1.0; 5], 1, 2, 2, &[1.0, 1.0]).is_err());
        assert!(mask_logits(&[1.0; 4], 1, 2, 2, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn logit_gradient_wrt_feature_is_query() {
        let queries = [0.5, -2.0, 1.5, 0.25];
        let feature = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut g = vec![0.0; 2 * 3];
        g[3 + 1] = 1.0; // token 1, pixel 1
        let (gf, _) = mask_logits_backward(&feature, 2, &queries, &g).unwrap();
        assert_eq!(gf, vec![0.0, 0.0, 1.5, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = TokenBank::new(4, 3, 8, 2, 3, &mut rng).unwrap();
        let t = bank.compute_tokens();
        let feature = vec![0.3; 9 * 2];
        let (g, gf) = backprop_tokens(&bank, &t, &feature, &vec![0.0; 4 * 9], &[0.0; 4 * 3]).unwrap();
        assert!(g.query_mlp.iter().chain(&g.semantic_mlp).chain(&gf).all(|&v| v == 0.0));
    }
}
