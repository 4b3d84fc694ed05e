//! Decoder-only transformer with a hand-written backward pass.
//!
//! Pre-LayerNorm blocks, learned absolute positions, tanh-GELU MLP and an
//! untied output head. Every weight lives in one flat [`ParameterVector`];
//! [`Layout`] records where each tensor sits. Matrices are row-major with
//! shape `in × out`.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::params::{ParameterVector, Segment};
use crate::error::{Error, Result};
use crate::rng::seeded;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    off: usize,
    len: usize,
}

impl Span {
    fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.off..self.off + self.len]
    }
    fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    ln1_g: Span,
    ln1_b: Span,
    w_qkv: Span,
    b_qkv: Span,
    w_o: Span,
    b_o: Span,
    ln2_g: Span,
    ln2_b: Span,
    w_fc: Span,
    b_fc: Span,
    w_proj: Span,
    b_proj: Span,
}

/// Where each tensor lives inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    wte: Span,
    wpe: Span,
    blocks: Vec<BlockLayout>,
    lnf_g: Span,
    lnf_b: Span,
    head: Span,
    segments: Arc<Vec<Segment>>,
}

struct LayoutBuilder {
    cursor: usize,
    segments: Vec<Segment>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, len: usize) -> Span {
        let span = Span {
            off: self.cursor,
            len,
        };
        self.segments.push(Segment {
            name,
            offset: self.cursor,
            len,
        });
        self.cursor += len;
        span
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.mlp_dim());
        let mut b = LayoutBuilder {
            cursor: 0,
            segments: Vec::new(),
        };
        let wte = b.push("wte".into(), v * d);
        let wpe = b.push("wpe".into(), cfg.context_len * d);
        let blocks = (0..cfg.n_layers)
            .map(|l| BlockLayout {
                ln1_g: b.push(format!("h{l}.ln1.gain"), d),
                ln1_b: b.push(format!("h{l}.ln1.bias"), d),
                w_qkv: b.push(format!("h{l}.attn.qkv.weight"), d * 3 * d),
                b_qkv: b.push(format!("h{l}.attn.qkv.bias"), 3 * d),
                w_o: b.push(format!("h{l}.attn.out.weight"), d * d),
                b_o: b.push(format!("h{l}.attn.out.bias"), d),
                ln2_g: b.push(format!("h{l}.ln2.gain"), d),
                ln2_b: b.push(format!("h{l}.ln2.bias"), d),
                w_fc: b.push(format!("h{l}.mlp.fc.weight"), d * f),
                b_fc: b.push(format!("h{l}.mlp.fc.bias"), f),
                w_proj: b.push(format!("h{l}.mlp.proj.weight"), f * d),
                b_proj: b.push(format!("h{l}.mlp.proj.bias"), d),
            })
            .collect();
        let lnf_g = b.push("lnf.gain".into(), d);
        let lnf_b = b.push("lnf.bias".into(), d);
        let head = b.push("lm_head.weight".into(), d * v);
        Self {
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            head,
            segments: Arc::new(b.segments),
        }
    }

    pub fn total(&self) -> usize {
        self.head.off + self.head.len
    }

    pub fn segments(&self) -> &Arc<Vec<Segment>> {
        &self.segments
    }
}

#[derive(Debug, Clone)]
pub struct LanguageModel {
    config: ModelConfig,
    layout: Layout,
    params: ParameterVector,
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct BlockCache {
    ln1: NormCache,
    a: Vec<f64>,
    qkv: Vec<f64>,
    att: Vec<f64>, // heads × T × T
    y: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    fc: Vec<f64>,
    gelu: Vec<f64>,
}

/// Activations kept from a forward pass for [`LanguageModel::backward`].
pub struct ForwardCache {
    tokens: Vec<u32>,
    blocks: Vec<BlockCache>,
    lnf: NormCache,
    z: Vec<f64>,
}

pub fn init_model(config: ModelConfig) -> Result<LanguageModel> {
    LanguageModel::init(config)
}

impl LanguageModel {
    /// Deterministic initialization from `config.init_seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total()];
        let mut rng = seeded(config.init_seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, resid_std).expect("valid std");
        let mut fill = |span: Span, dist: &Normal<f64>, values: &mut [f64]| {
            for v in span.of_mut(values) {
                *v = dist.sample(&mut rng);
            }
        };
        fill(layout.wte, &normal, &mut values);
        fill(layout.wpe, &normal, &mut values);
        for blk in &layout.blocks {
            blk.ln1_g.of_mut(&mut values).fill(1.0);
            blk.ln2_g.of_mut(&mut values).fill(1.0);
            fill(blk.w_qkv, &normal, &mut values);
            fill(blk.w_o, &resid, &mut values);
            fill(blk.w_fc, &normal, &mut values);
            fill(blk.w_proj, &resid, &mut values);
        }
        layout.lnf_g.of_mut(&mut values).fill(1.0);
        fill(layout.head, &normal, &mut values);
        config.precision.quantize(&mut values);
        let params = ParameterVector::new(values, layout.segments().clone())?;
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Rebuilds a model around existing weights.
    pub fn from_params(config: ModelConfig, params: ParameterVector) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.segments().as_slice() != layout.segments().as_slice() {
            return Err(Error::SegmentMismatch);
        }
        if !params.all_finite() {
            return Err(Error::InvalidArgument("parameters contain non-finite values".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces the weights, rounding to the configured precision.
    pub fn set_params(&mut self, mut params: ParameterVector) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::SegmentMismatch);
        }
        self.config.precision.quantize(params.values_mut());
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParameterVector) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    pub fn zero_grad(&self) -> ParameterVector {
        ParameterVector::zeros_like(&self.params)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.config.context_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                context_len: self.config.context_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits for every position (`|tokens| × vocab`).
    pub fn forward(&self, tokens: &[u32]) -> Result<Matrix> {
        Ok(self.forward_with_cache(tokens)?.0)
    }

    /// Logits of the final position only.
    pub fn next_token_logits(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Empty("token context"));
        }
        self.check_tokens(tokens)?;
        let (x, _) = self.trunk(tokens, false);
        let d = self.config.embed_dim;
        let t = tokens.len() - 1;
        let p = self.params.values();
        let mut z = vec![0.0; d];
        let mut scratch = NormCache {
            xhat: vec![0.0; d],
            rstd: vec![0.0; 1],
        };
        layer_norm(
            &x[t * d..(t + 1) * d],
            self.layout.lnf_g.of(p),
            self.layout.lnf_b.of(p),
            &mut z,
            &mut scratch,
            d,
        );
        let mut out = vec![0.0; self.config.vocab_size];
        matmul(&mut out, &z, self.layout.head.of(p), None, 1, d, self.config.vocab_size);
        Ok(out)
    }

    pub fn forward_with_cache(&self, tokens: &[u32]) -> Result<(Matrix, ForwardCache)> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let (d, v) = (self.config.embed_dim, self.config.vocab_size);
        let (x, blocks) = self.trunk(tokens, true);
        let p = self.params.values();
        let mut z = vec![0.0; n * d];
        let mut lnf = NormCache {
            xhat: vec![0.0; n * d],
            rstd: vec![0.0; n],
        };
        layer_norm(&x, self.layout.lnf_g.of(p), self.layout.lnf_b.of(p), &mut z, &mut lnf, d);
        let mut logits = Matrix::zeros(n, v);
        matmul(&mut logits.data, &z, self.layout.head.of(p), None, n, d, v);
        Ok((
            logits,
            ForwardCache {
                tokens: tokens.to_vec(),
                blocks,
                lnf,
                z,
            },
        ))
    }

    /// Embeddings plus all blocks; returns the residual stream before the final norm.
    fn trunk(&self, tokens: &[u32], keep: bool) -> (Vec<f64>, Vec<BlockCache>) {
        let n = tokens.len();
        let cfg = &self.config;
        let (d, f, nh, hd) = (cfg.embed_dim, cfg.mlp_dim(), cfg.n_heads, cfg.head_dim());
        let p = self.params.values();
        let wte = self.layout.wte.of(p);
        let wpe = self.layout.wpe.of(p);

        let mut x = vec![0.0; n * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let pe = &wpe[t * d..(t + 1) * d];
            for ((xi, ei), pi) in x[t * d..(t + 1) * d].iter_mut().zip(e).zip(pe) {
                *xi = ei + pi;
            }
        }

        let scale = 1.0 / (hd as f64).sqrt();
        let mut caches = Vec::with_capacity(if keep { cfg.n_layers } else { 0 });
        for blk in &self.layout.blocks {
            let mut ln1 = NormCache {
                xhat: vec![0.0; n * d],
                rstd: vec![0.0; n],
            };
            let mut a = vec![0.0; n * d];
            layer_norm(&x, blk.ln1_g.of(p), blk.ln1_b.of(p), &mut a, &mut ln1, d);
            let mut qkv = vec![0.0; n * 3 * d];
            matmul(&mut qkv, &a, blk.w_qkv.of(p), Some(blk.b_qkv.of(p)), n, d, 3 * d);

            let mut att = vec![0.0; nh * n * n];
            let mut y = vec![0.0; n * d];
            for h in 0..nh {
                for t in 0..n {
                    let q = &qkv[t * 3 * d + h * hd..t * 3 * d + (h + 1) * hd];
                    let row = &mut att[(h * n + t) * n..(h * n + t + 1) * n];
                    let mut max = f64::NEG_INFINITY;
                    for s in 0..=t {
                        let k = &qkv[s * 3 * d + d + h * hd..s * 3 * d + d + (h + 1) * hd];
                        let sc = dot(q, k) * scale;
                        row[s] = sc;
                        max = max.max(sc);
                    }
                    let mut sum = 0.0;
                    for r in row.iter_mut().take(t + 1) {
                        *r = (*r - max).exp();
                        sum += *r;
                    }
                    let yt = &mut y[t * d + h * hd..t * d + (h + 1) * hd];
                    for s in 0..=t {
                        row[s] /= sum;
                        let vv = &qkv[s * 3 * d + 2 * d + h * hd..s * 3 * d + 2 * d + (h + 1) * hd];
                        axpy_into(yt, row[s], vv);
                    }
                }
            }
            let mut o = vec![0.0; n * d];
            matmul(&mut o, &y, blk.w_o.of(p), Some(blk.b_o.of(p)), n, d, d);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }

            let mut ln2 = NormCache {
                xhat: vec![0.0; n * d],
                rstd: vec![0.0; n],
            };
            let mut b = vec![0.0; n * d];
            layer_norm(&x, blk.ln2_g.of(p), blk.ln2_b.of(p), &mut b, &mut ln2, d);
            let mut fc = vec![0.0; n * f];
            matmul(&mut fc, &b, blk.w_fc.of(p), Some(blk.b_fc.of(p)), n, d, f);
            let g: Vec<f64> = fc.iter().map(|&u| gelu(u)).collect();
            let mut m = vec![0.0; n * d];
            matmul(&mut m, &g, blk.w_proj.of(p), Some(blk.b_proj.of(p)), n, f, d);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
            if keep {
                caches.push(BlockCache {
                    ln1,
                    a,
                    qkv,
                    att,
                    y,
                    ln2,
                    b,
                    fc,
                    gelu: g,
                });
            }
        }
        (x, caches)
    }

    /// Accumulates `∂(Σ dlogits ⊙ logits)/∂θ` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix, grad: &mut ParameterVector) {
        let cfg = &self.config;
        let n = cache.tokens.len();
        let (d, f, v, nh, hd) = (
            cfg.embed_dim,
            cfg.mlp_dim(),
            cfg.vocab_size,
            cfg.n_heads,
            cfg.head_dim(),
        );
        let p = self.params.values();
        let g = grad.values_mut();
        let lay = &self.layout;

        let mut dz = vec![0.0; n * d];
        matmul_backward(&mut dz, lay.head.of_mut(g), None, &dlogits.data, &cache.z, lay.head.of(p), n, d, v);
        let mut dx = vec![0.0; n * d];
        layer_norm_backward(&mut dx, &dz, &cache.lnf, lay.lnf_g.of(p), g, lay.lnf_g, lay.lnf_b, d);

        let scale = 1.0 / (hd as f64).sqrt();
        for (blk, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch.
            let mut dgelu = vec![0.0; n * f];
            {
                let (wg, bg) = split_two(g, blk.w_proj, blk.b_proj);
                matmul_backward(&mut dgelu, wg, Some(bg), &dx, &bc.gelu, blk.w_proj.of(p), n, f, d);
            }
            for (dg, &u) in dgelu.iter_mut().zip(&bc.fc) {
                *dg *= gelu_grad(u);
            }
            let mut db = vec![0.0; n * d];
            {
                let (wg, bg) = split_two(g, blk.w_fc, blk.b_fc);
                matmul_backward(&mut db, wg, Some(bg), &dgelu, &bc.b, blk.w_fc.of(p), n, d, f);
            }
            layer_norm_backward(&mut dx, &db, &bc.ln2, blk.ln2_g.of(p), g, blk.ln2_g, blk.ln2_b, d);

            // Attention branch.
            let mut dy = vec![0.0; n * d];
            {
                let (wg, bg) = split_two(g, blk.w_o, blk.b_o);
                matmul_backward(&mut dy, wg, Some(bg), &dx, &bc.y, blk.w_o.of(p), n, d, d);
            }
            let mut dqkv = vec![0.0; n * 3 * d];
            let mut datt = vec![0.0; n];
            for h in 0..nh {
                for t in 0..n {
                    let row = &bc.att[(h * n + t) * n..(h * n + t + 1) * n];
                    let dyt = &dy[t * d + h * hd..t * d + (h + 1) * hd];
                    let mut weighted = 0.0;
                    for s in 0..=t {
                        let vo = s * 3 * d + 2 * d + h * hd;
                        datt[s] = dot(dyt, &bc.qkv[vo..vo + hd]);
                        weighted += row[s] * datt[s];
                        axpy_into(&mut dqkv[vo..vo + hd], row[s], dyt);
                    }
                    let qo = t * 3 * d + h * hd;
                    for s in 0..=t {
                        let ds = row[s] * (datt[s] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let ko = s * 3 * d + d + h * hd;
                        for i in 0..hd {
                            dqkv[qo + i] += ds * bc.qkv[ko + i];
                            dqkv[ko + i] += ds * bc.qkv[qo + i];
                        }
                    }
                }
            }
            let mut da = vec![0.0; n * d];
            {
                let (wg, bg) = split_two(g, blk.w_qkv, blk.b_qkv);
                matmul_backward(&mut da, wg, Some(bg), &dqkv, &bc.a, blk.w_qkv.of(p), n, d, 3 * d);
            }
            layer_norm_backward(&mut dx, &da, &bc.ln1, blk.ln1_g.of(p), g, blk.ln1_g, blk.ln1_b, d);
        }

        for (t, &tok) in cache.tokens.iter().enumerate() {
            let row = &dx[t * d..(t + 1) * d];
            let te = lay.wte.off + tok as usize * d;
            axpy_into(&mut g[te..te + d], 1.0, row);
            let pe = lay.wpe.off + t * d;
            axpy_into(&mut g[pe..pe + d], 1.0, row);
        }
    }
}

/// Disjoint mutable views of a weight span and the bias span that follows it.
fn split_two(g: &mut [f64], w: Span, b: Span) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(w.off + w.len, b.off);
    let (head, tail) = g.split_at_mut(b.off);
    (&mut head[w.off..w.off + w.len], &mut tail[..b.len])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy_into(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `out[n×m] = inp[n×k] · w[k×m] (+ bias)`.
fn matmul(out: &mut [f64], inp: &[f64], w: &[f64], bias: Option<&[f64]>, n: usize, k: usize, m: usize) {
    for t in 0..n {
        let o = &mut out[t * m..(t + 1) * m];
        match bias {
            Some(b) => o.copy_from_slice(b),
            None => o.fill(0.0),
        }
        let row = &inp[t * k..(t + 1) * k];
        for (j, &a) in row.iter().enumerate() {
            if a != 0.0 {
                axpy_into(o, a, &w[j * m..(j + 1) * m]);
            }
        }
    }
}

/// Backward of [`matmul`]: accumulates into `dinp`, `dw` and `db`.
#[allow(clippy::too_many_arguments)]
fn matmul_backward(
    dinp: &mut [f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    n: usize,
    k: usize,
    m: usize,
) {
    for t in 0..n {
        let go = &dout[t * m..(t + 1) * m];
        let di = &mut dinp[t * k..(t + 1) * k];
        for (j, dij) in di.iter_mut().enumerate() {
            *dij += dot(go, &w[j * m..(j + 1) * m]);
        }
        let row = &inp[t * k..(t + 1) * k];
        for (j, &a) in row.iter().enumerate() {
            if a != 0.0 {
                axpy_into(&mut dw[j * m..(j + 1) * m], a, go);
            }
        }
    }
    if let Some(db) = db {
        for t in 0..n {
            axpy_into(db, 1.0, &dout[t * m..(t + 1) * m]);
        }
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64], cache: &mut NormCache, d: usize) {
    for (t, xr) in x.chunks_exact(d).enumerate() {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[t] = rstd;
        for i in 0..d {
            let xh = (xr[i] - mean) * rstd;
            cache.xhat[t * d + i] = xh;
            out[t * d + i] = xh * gain[i] + bias[i];
        }
    }
}

/// Accumulates the input gradient into `dx` and gain/bias gradients into `g`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dx: &mut [f64],
    dout: &[f64],
    cache: &NormCache,
    gain: &[f64],
    g: &mut [f64],
    gain_span: Span,
    bias_span: Span,
    d: usize,
) {
    let mut dxhat = vec![0.0; d];
    for (t, go) in dout.chunks_exact(d).enumerate() {
        let xh = &cache.xhat[t * d..(t + 1) * d];
        {
            let gg = gain_span.of_mut(g);
            for i in 0..d {
                gg[i] += go[i] * xh[i];
            }
        }
        axpy_into(bias_span.of_mut(g), 1.0, go);
        for i in 0..d {
            dxhat[i] = go[i] * gain[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        let rstd = cache.rstd[t];
        for i in 0..d {
            dx[t * d + i] += rstd * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
}
