//! Forward pass, next-token loss and hand-derived reverse-mode gradients.

use rand::Rng;

use super::params::{LayerLayout, LmParams};
use super::scalar::{gemm, Scalar, View};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Per-layer activations kept for the backward pass.
struct LayerCache<F> {
    x_in: Vec<F>,
    h1: Vec<F>,
    rstd1: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    mask1: Option<Vec<F>>,
    x_mid: Vec<F>,
    h2: Vec<F>,
    rstd2: Vec<F>,
    pre: Vec<F>,
    th: Vec<F>,
    act: Vec<F>,
    mask2: Option<Vec<F>>,
}

/// Activations of a batched forward pass.
pub struct Forward<F> {
    batch: usize,
    seq: usize,
    tokens: Vec<u32>,
    mask0: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    x_final: Vec<F>,
    hf: Vec<F>,
    rstdf: Vec<F>,
    /// `[batch * seq, vocab]` logits.
    pub logits: Vec<F>,
}

impl<F: Scalar> Forward<F> {
    /// Logits of row `b`, position `t`.
    pub fn logits_at(&self, b: usize, t: usize, vocab: usize) -> &[F] {
        let row = b * self.seq + t;
        &self.logits[row * vocab..(row + 1) * vocab]
    }
}

fn dropout_mask<F: Scalar, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<F> {
    let keep = F::c(1.0 / (1.0 - p));
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < p {
                F::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Row-wise layer norm of `x [rows, d]`; returns the output and `1/std`.
fn layer_norm<F: Scalar>(x: &[F], g: &[F], b: &[F], d: usize) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / d;
    let mut out = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let inv_d = F::c(1.0 / d as f64);
    let eps = F::c(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().fold(F::zero(), |a, &v| a + v) * inv_d;
        let var = xr
            .iter()
            .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
            * inv_d;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            o[j] = (xr[j] - mean) * rs * g[j] + b[j];
        }
    }
    (out, rstd)
}

/// Backward of [`layer_norm`]; accumulates into `dx`, `dg`, `db`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<F: Scalar>(
    x: &[F],
    rstd: &[F],
    g: &[F],
    dy: &[F],
    d: usize,
    dx: &mut [F],
    dg: &mut [F],
    db: &mut [F],
) {
    let rows = x.len() / d;
    let inv_d = F::c(1.0 / d as f64);
    let mut xhat = vec![F::zero(); d];
    let mut dxhat = vec![F::zero(); d];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mean = xr.iter().fold(F::zero(), |a, &v| a + v) * inv_d;
        let rs = rstd[r];
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for j in 0..d {
            xhat[j] = (xr[j] - mean) * rs;
            dxhat[j] = dyr[j] * g[j];
            dg[j] = dg[j] + dyr[j] * xhat[j];
            db[j] = db[j] + dyr[j];
            sum_dxhat = sum_dxhat + dxhat[j];
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[j] * xhat[j];
        }
        let m1 = sum_dxhat * inv_d;
        let m2 = sum_dxhat_xhat * inv_d;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            dxr[j] = dxr[j] + rs * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
}

fn add_bias<F: Scalar>(y: &mut [F], bias: &[F]) {
    let n = bias.len();
    for row in y.chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

fn col_sum_into<F: Scalar>(dy: &[F], n: usize, out: &mut [F]) {
    for row in dy.chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

/// `x[rows, k] @ w[k, n] (+ bias)`.
fn linear<F: Scalar>(x: &[F], w: &[F], bias: &[F], k: usize, n: usize) -> Vec<F> {
    let rows = x.len() / k;
    let mut y = vec![F::zero(); rows * n];
    gemm(
        rows,
        k,
        n,
        F::one(),
        x,
        View::rows(0, k),
        w,
        View::rows(0, n),
        F::zero(),
        &mut y,
        View::rows(0, n),
    );
    add_bias(&mut y, bias);
    y
}

/// Backward of [`linear`]: accumulates `dw += x^T dy`, `db += colsum(dy)` and
/// returns `dx = dy w^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dy: &[F],
    k: usize,
    n: usize,
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    let rows = x.len() / k;
    gemm(
        k,
        rows,
        n,
        F::one(),
        x,
        View::transposed(0, k),
        dy,
        View::rows(0, n),
        F::one(),
        dw,
        View::rows(0, n),
    );
    col_sum_into(dy, n, db);
    let mut dx = vec![F::zero(); rows * k];
    gemm(
        rows,
        n,
        k,
        F::one(),
        dy,
        View::rows(0, n),
        w,
        View::transposed(0, n),
        F::zero(),
        &mut dx,
        View::rows(0, k),
    );
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through `exp`; several times cheaper than libm `tanh` and exact up
/// to rounding (saturates cleanly when `exp` overflows).
#[inline]
fn fast_tanh<F: Scalar>(u: F) -> F {
    let two = F::c(2.0);
    F::one() - two / ((two * u).exp() + F::one())
}

/// Tanh-approximation GELU; returns the value and the inner `tanh` for reuse
/// in the backward pass.
#[inline]
fn gelu<F: Scalar>(x: F) -> (F, F) {
    let th = fast_tanh(F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x));
    (F::c(0.5) * x * (F::one() + th), th)
}

#[inline]
fn gelu_grad<F: Scalar>(x: F, th: F) -> F {
    let c = F::c(GELU_C);
    let a = F::c(GELU_A);
    let half = F::c(0.5);
    let du = c * (F::one() + F::c(3.0) * a * x * x);
    half * (F::one() + th) + half * x * (F::one() - th * th) * du
}

fn check_tokens(tokens: &[u32], vocab: usize) -> Result<()> {
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::OutOfRange {
            kind: "token",
            id: bad as usize,
            size: vocab,
        });
    }
    Ok(())
}

impl<F: Scalar> LmParams<F> {
    #[inline]
    fn t(&self, r: &std::ops::Range<usize>) -> &[F] {
        &self.data[r.clone()]
    }

    /// Runs `batch` sequences of length `seq` (flattened in `tokens`).
    ///
    /// With `dropout` set, dropout masks are drawn from the given generator;
    /// otherwise the pass is deterministic (evaluation mode).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tokens: &[u32],
        batch: usize,
        seq: usize,
        mut dropout: Option<&mut R>,
    ) -> Result<Forward<F>> {
        let cfg = &self.config;
        assert_eq!(tokens.len(), batch * seq, "token buffer shape");
        if seq == 0 || seq > cfg.context_len {
            return Err(Error::Config(format!(
                "sequence length {seq} outside 1..={}",
                cfg.context_len
            )));
        }
        check_tokens(tokens, cfg.vocab_size)?;
        let d = cfg.model_dim;
        let m = batch * seq;
        let p_drop = if dropout.is_some() { cfg.dropout } else { 0.0 };
        let mut draw = |len: usize| -> Option<Vec<F>> {
            match dropout.as_deref_mut() {
                Some(rng) if p_drop > 0.0 => Some(dropout_mask(len, p_drop, rng)),
                _ => None,
            }
        };

        let wte = self.t(&self.layout.wte);
        let wpe = self.t(&self.layout.wpe);
        let mut x = vec![F::zero(); m * d];
        for (row, &tok) in tokens.iter().enumerate() {
            let pos = row % seq;
            let te = &wte[tok as usize * d..(tok as usize + 1) * d];
            let pe = &wpe[pos * d..(pos + 1) * d];
            for j in 0..d {
                x[row * d + j] = te[j] + pe[j];
            }
        }
        let mask0 = draw(m * d);
        if let Some(mk) = &mask0 {
            x.iter_mut().zip(mk).for_each(|(v, &k)| *v = *v * k);
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &self.layout.layers {
            let (cache, x_next) = self.layer_forward(l, x, batch, seq, &mut draw);
            layers.push(cache);
            x = x_next;
        }
        let (hf, rstdf) = layer_norm(
            &x,
            self.t(&self.layout.lnf_g),
            self.t(&self.layout.lnf_b),
            d,
        );
        let v = cfg.vocab_size;
        let mut logits = vec![F::zero(); m * v];
        gemm(
            m,
            d,
            v,
            F::one(),
            &hf,
            View::rows(0, d),
            wte,
            View::transposed(0, d),
            F::zero(),
            &mut logits,
            View::rows(0, v),
        );
        Ok(Forward {
            batch,
            seq,
            tokens: tokens.to_vec(),
            mask0,
            layers,
            x_final: x,
            hf,
            rstdf,
            logits,
        })
    }

    fn layer_forward(
        &self,
        l: &LayerLayout,
        x_in: Vec<F>,
        batch: usize,
        seq: usize,
        draw: &mut impl FnMut(usize) -> Option<Vec<F>>,
    ) -> (LayerCache<F>, Vec<F>) {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let f = cfg.ff_dim;
        let heads = cfg.heads;
        let hd = cfg.head_dim();
        let m = batch * seq;
        let scale = F::c(1.0 / (hd as f64).sqrt());

        let (h1, rstd1) = layer_norm(&x_in, self.t(&l.ln1_g), self.t(&l.ln1_b), d);
        let qkv = linear(&h1, self.t(&l.w_qkv), self.t(&l.b_qkv), d, 3 * d);

        let mut probs = vec![F::zero(); batch * heads * seq * seq];
        let mut att = vec![F::zero(); m * d];
        for b in 0..batch {
            for h in 0..heads {
                let qoff = b * seq * 3 * d + h * hd;
                let koff = qoff + d;
                let voff = qoff + 2 * d;
                let poff = (b * heads + h) * seq * seq;
                gemm(
                    seq,
                    hd,
                    seq,
                    scale,
                    &qkv,
                    View::rows(qoff, 3 * d),
                    &qkv,
                    View::transposed(koff, 3 * d),
                    F::zero(),
                    &mut probs,
                    View::rows(poff, seq),
                );
                for i in 0..seq {
                    let row = &mut probs[poff + i * seq..poff + (i + 1) * seq];
                    let max = row[..=i].iter().copied().fold(F::neg_infinity(), F::max);
                    let mut sum = F::zero();
                    for v in &mut row[..=i] {
                        *v = (*v - max).exp();
                        sum = sum + *v;
                    }
                    let inv = F::one() / sum;
                    for v in &mut row[..=i] {
                        *v = *v * inv;
                    }
                    for v in &mut row[i + 1..] {
                        *v = F::zero();
                    }
                }
                gemm(
                    seq,
                    seq,
                    hd,
                    F::one(),
                    &probs,
                    View::rows(poff, seq),
                    &qkv,
                    View::rows(voff, 3 * d),
                    F::zero(),
                    &mut att,
                    View::rows(b * seq * d + h * hd, d),
                );
            }
        }
        let mut y = linear(&att, self.t(&l.w_o), self.t(&l.b_o), d, d);
        let mask1 = draw(m * d);
        if let Some(mk) = &mask1 {
            y.iter_mut().zip(mk).for_each(|(v, &k)| *v = *v * k);
        }
        let x_mid: Vec<F> = x_in.iter().zip(&y).map(|(&a, &b)| a + b).collect();

        let (h2, rstd2) = layer_norm(&x_mid, self.t(&l.ln2_g), self.t(&l.ln2_b), d);
        let pre = linear(&h2, self.t(&l.w_fc), self.t(&l.b_fc), d, f);
        let (act, th): (Vec<F>, Vec<F>) = pre.iter().map(|&v| gelu(v)).unzip();
        let mut z = linear(&act, self.t(&l.w_proj), self.t(&l.b_proj), f, d);
        let mask2 = draw(m * d);
        if let Some(mk) = &mask2 {
            z.iter_mut().zip(mk).for_each(|(v, &k)| *v = *v * k);
        }
        let x_out: Vec<F> = x_mid.iter().zip(&z).map(|(&a, &b)| a + b).collect();
        (
            LayerCache {
                x_in,
                h1,
                rstd1,
                qkv,
                probs,
                att,
                mask1,
                x_mid,
                h2,
                rstd2,
                pre,
                th,
                act,
                mask2,
            },
            x_out,
        )
    }

    /// Mean next-token negative log-likelihood over every position that has a
    /// successor, plus the gradient of that mean w.r.t. every parameter.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        tokens: &[u32],
        batch: usize,
        seq: usize,
        dropout: Option<&mut R>,
    ) -> Result<(f64, Vec<F>)> {
        let fwd = self.forward(tokens, batch, seq, dropout)?;
        let v = self.config.vocab_size;
        let count = batch * (seq - 1);
        let inv_n = F::c(1.0 / count.max(1) as f64);
        let mut loss = 0.0f64;
        let mut dlogits = vec![F::zero(); batch * seq * v];
        for b in 0..batch {
            for t in 0..seq - 1 {
                let row = b * seq + t;
                let target = fwd.tokens[row + 1] as usize;
                let lg = &fwd.logits[row * v..(row + 1) * v];
                let max = lg.iter().copied().fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                let dl = &mut dlogits[row * v..(row + 1) * v];
                for (o, &x) in dl.iter_mut().zip(lg) {
                    *o = (x - max).exp();
                    sum = sum + *o;
                }
                loss += (sum.ln() + max - lg[target]).f64();
                let inv = F::one() / sum;
                for o in dl.iter_mut() {
                    *o = *o * inv * inv_n;
                }
                dl[target] = dl[target] - inv_n;
            }
        }
        let loss = loss / count.max(1) as f64;
        let grad = self.backward(&fwd, &dlogits);
        Ok((loss, grad))
    }

    /// Mean next-token loss without gradients (evaluation mode).
    pub fn loss(&self, tokens: &[u32], batch: usize, seq: usize) -> Result<f64> {
        let fwd = self.forward::<rand_chacha::ChaCha8Rng>(tokens, batch, seq, None)?;
        let v = self.config.vocab_size;
        let mut loss = 0.0;
        for b in 0..batch {
            for t in 0..seq - 1 {
                let row = b * seq + t;
                let lg = &fwd.logits[row * v..(row + 1) * v];
                let max = lg.iter().copied().fold(F::neg_infinity(), F::max);
                let sum = lg.iter().fold(F::zero(), |a, &x| a + (x - max).exp());
                loss += (sum.ln() + max - lg[fwd.tokens[row + 1] as usize]).f64();
            }
        }
        Ok(loss / (batch * (seq - 1)).max(1) as f64)
    }

    /// Reverse-mode pass from `dL/dlogits`.
    pub fn backward(&self, fwd: &Forward<F>, dlogits: &[F]) -> Vec<F> {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let v = cfg.vocab_size;
        let (batch, seq) = (fwd.batch, fwd.seq);
        let m = batch * seq;
        let mut grad = vec![F::zero(); self.layout.total];
        let lay = &self.layout;

        // logits = hf @ wte^T
        {
            let wte = self.t(&lay.wte);
            let gw = &mut grad[lay.wte.clone()];
            gemm(
                v,
                m,
                d,
                F::one(),
                dlogits,
                View::transposed(0, v),
                &fwd.hf,
                View::rows(0, d),
                F::one(),
                gw,
                View::rows(0, d),
            );
            let mut dhf = vec![F::zero(); m * d];
            gemm(
                m,
                v,
                d,
                F::one(),
                dlogits,
                View::rows(0, v),
                wte,
                View::rows(0, d),
                F::zero(),
                &mut dhf,
                View::rows(0, d),
            );
            let mut dx = vec![F::zero(); m * d];
            let (gg, gb) = split_two(&mut grad, &lay.lnf_g, &lay.lnf_b);
            layer_norm_backward(
                &fwd.x_final,
                &fwd.rstdf,
                self.t(&lay.lnf_g),
                &dhf,
                d,
                &mut dx,
                gg,
                gb,
            );
            for (l, cache) in lay.layers.iter().zip(&fwd.layers).rev() {
                dx = self.layer_backward(l, cache, dx, batch, seq, &mut grad);
            }
            if let Some(mk) = &fwd.mask0 {
                dx.iter_mut().zip(mk).for_each(|(g, &k)| *g = *g * k);
            }
            for (row, &tok) in fwd.tokens.iter().enumerate() {
                let pos = row % seq;
                let src = &dx[row * d..(row + 1) * d];
                let te = lay.wte.start + tok as usize * d;
                for j in 0..d {
                    grad[te + j] = grad[te + j] + src[j];
                }
                let pe = lay.wpe.start + pos * d;
                for j in 0..d {
                    grad[pe + j] = grad[pe + j] + src[j];
                }
            }
        }
        grad
    }

    fn layer_backward(
        &self,
        l: &LayerLayout,
        c: &LayerCache<F>,
        dx_out: Vec<F>,
        batch: usize,
        seq: usize,
        grad: &mut [F],
    ) -> Vec<F> {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let f = cfg.ff_dim;
        let heads = cfg.heads;
        let hd = cfg.head_dim();
        let m = batch * seq;
        let scale = F::c(1.0 / (hd as f64).sqrt());

        // MLP branch: x_out = x_mid + drop(act @ w_proj + b_proj)
        let mut dz = dx_out.clone();
        if let Some(mk) = &c.mask2 {
            dz.iter_mut().zip(mk).for_each(|(g, &k)| *g = *g * k);
        }
        let dact = {
            let (gw, gb) = split_two(grad, &l.w_proj, &l.b_proj);
            linear_backward(&c.act, self.t(&l.w_proj), &dz, f, d, gw, gb)
        };
        let dpre: Vec<F> = dact
            .iter()
            .zip(c.pre.iter().zip(&c.th))
            .map(|(&g, (&x, &th))| g * gelu_grad(x, th))
            .collect();
        let dh2 = {
            let (gw, gb) = split_two(grad, &l.w_fc, &l.b_fc);
            linear_backward(&c.h2, self.t(&l.w_fc), &dpre, d, f, gw, gb)
        };
        let mut dx_mid = dx_out;
        {
            let (gg, gb) = split_two(grad, &l.ln2_g, &l.ln2_b);
            layer_norm_backward(
                &c.x_mid,
                &c.rstd2,
                self.t(&l.ln2_g),
                &dh2,
                d,
                &mut dx_mid,
                gg,
                gb,
            );
        }

        // Attention branch: x_mid = x_in + drop(att @ w_o + b_o)
        let mut dy = dx_mid.clone();
        if let Some(mk) = &c.mask1 {
            dy.iter_mut().zip(mk).for_each(|(g, &k)| *g = *g * k);
        }
        let datt = {
            let (gw, gb) = split_two(grad, &l.w_o, &l.b_o);
            linear_backward(&c.att, self.t(&l.w_o), &dy, d, d, gw, gb)
        };
        let mut dqkv = vec![F::zero(); m * 3 * d];
        let mut dp = vec![F::zero(); seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let qoff = b * seq * 3 * d + h * hd;
                let koff = qoff + d;
                let voff = qoff + 2 * d;
                let poff = (b * heads + h) * seq * seq;
                let ooff = b * seq * d + h * hd;
                // dP = dO V^T
                gemm(
                    seq,
                    hd,
                    seq,
                    F::one(),
                    &datt,
                    View::rows(ooff, d),
                    &c.qkv,
                    View::transposed(voff, 3 * d),
                    F::zero(),
                    &mut dp,
                    View::rows(0, seq),
                );
                // dV = P^T dO
                gemm(
                    seq,
                    seq,
                    hd,
                    F::one(),
                    &c.probs,
                    View::transposed(poff, seq),
                    &datt,
                    View::rows(ooff, d),
                    F::zero(),
                    &mut dqkv,
                    View::rows(voff, 3 * d),
                );
                // dS = P * (dP - rowsum(dP * P)), scaled for the 1/sqrt(hd) factor
                for i in 0..seq {
                    let pr = &c.probs[poff + i * seq..poff + (i + 1) * seq];
                    let dr = &mut dp[i * seq..(i + 1) * seq];
                    let dot = pr[..=i]
                        .iter()
                        .zip(&dr[..=i])
                        .fold(F::zero(), |a, (&p, &g)| a + p * g);
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                    for g in &mut dr[i + 1..] {
                        *g = F::zero();
                    }
                }
                // dQ = dS K, dK = dS^T Q
                gemm(
                    seq,
                    seq,
                    hd,
                    F::one(),
                    &dp,
                    View::rows(0, seq),
                    &c.qkv,
                    View::rows(koff, 3 * d),
                    F::zero(),
                    &mut dqkv,
                    View::rows(qoff, 3 * d),
                );
                gemm(
                    seq,
                    seq,
                    hd,
                    F::one(),
                    &dp,
                    View::transposed(0, seq),
                    &c.qkv,
                    View::rows(qoff, 3 * d),
                    F::zero(),
                    &mut dqkv,
                    View::rows(koff, 3 * d),
                );
            }
        }
        let dh1 = {
            let (gw, gb) = split_two(grad, &l.w_qkv, &l.b_qkv);
            linear_backward(&c.h1, self.t(&l.w_qkv), &dqkv, d, 3 * d, gw, gb)
        };
        let mut dx_in = dx_mid;
        {
            let (gg, gb) = split_two(grad, &l.ln1_g, &l.ln1_b);
            layer_norm_backward(
                &c.x_in,
                &c.rstd1,
                self.t(&l.ln1_g),
                &dh1,
                d,
                &mut dx_in,
                gg,
                gb,
            );
        }
        dx_in
    }

    /// Evaluation-mode logits of the last position of one sequence.
    pub fn last_logits(&self, tokens: &[u32]) -> Result<Vec<F>> {
        let fwd = self.forward::<rand_chacha::ChaCha8Rng>(tokens, 1, tokens.len(), None)?;
        Ok(fwd
            .logits_at(0, tokens.len() - 1, self.config.vocab_size)
            .to_vec())
    }
}

/// Two disjoint mutable sub-slices of the gradient; `a` must precede `b`.
fn split_two<'a, F>(
    grad: &'a mut [F],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [F], &'a mut [F]) {
    assert!(a.end <= b.start, "tensor ranges out of order");
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> LmConfig {
        LmConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            context_len: 8,
            vocab_size: 12,
            dropout: 0.0,
            seed,
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h).0 - gelu(x - h).0) / (2.0 * h);
            assert!((fd - gelu_grad(x, gelu(x).1)).abs() < 1e-8);
            assert!((fast_tanh(x) - x.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let p = LmParams::<f64>::init(&tiny(0)).unwrap();
        let err = p
            .loss_and_grad::<ChaCha8Rng>(&[1, 2, 12, 3], 1, 4, None)
            .unwrap_err();
        assert!(matches!(err, Error::OutOfRange { id: 12, .. }));
    }

    #[test]
    fn causal_logits_ignore_future_tokens() {
        let p = LmParams::<f64>::init(&tiny(3)).unwrap();
        let a = p
            .forward::<ChaCha8Rng>(&[1, 2, 3, 4, 5, 6], 1, 6, None)
            .unwrap();
        let b = p
            .forward::<ChaCha8Rng>(&[1, 2, 3, 9, 0, 11], 1, 6, None)
            .unwrap();
        for t in 0..3 {
            assert_eq!(a.logits_at(0, t, 12), b.logits_at(0, t, 12));
        }
        assert_ne!(a.logits_at(0, 3, 12), b.logits_at(0, 3, 12));
    }

    #[test]
    fn batch_rows_are_independent() {
        let p = LmParams::<f64>::init(&tiny(5)).unwrap();
        let one = p.forward::<ChaCha8Rng>(&[4, 5, 6, 7], 1, 4, None).unwrap();
        let two = p
            .forward::<ChaCha8Rng>(&[1, 1, 1, 1, 4, 5, 6, 7], 2, 4, None)
            .unwrap();
        for t in 0..4 {
            let x = one.logits_at(0, t, 12);
            let y = two.logits_at(1, t, 12);
            for (a, b) in x.iter().zip(y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_gradient_matches_fixed_mask_difference() {
        // With the same seeded mask, the loss is a smooth function of θ.
        let mut cfg = tiny(11);
        cfg.dropout = 0.3;
        let p = LmParams::<f64>::init(&cfg).unwrap();
        let toks = [1u32, 5, 2, 7, 3, 3, 9, 0];
        let (_, g) = p
            .loss_and_grad(&toks, 2, 4, Some(&mut ChaCha8Rng::seed_from_u64(1)))
            .unwrap();
        let i = p.layout.layers[0].w_fc.start + 3;
        let h = 1e-5;
        let mut plus = p.clone();
        plus.data[i] += h;
        let mut minus = p.clone();
        minus.data[i] -= h;
        let (lp, _) = plus
            .loss_and_grad(&toks, 2, 4, Some(&mut ChaCha8Rng::seed_from_u64(1)))
            .unwrap();
        let (lm, _) = minus
            .loss_and_grad(&toks, 2, 4, Some(&mut ChaCha8Rng::seed_from_u64(1)))
            .unwrap();
        let fd = (lp - lm) / (2.0 * h);
        assert!(
            (fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()),
            "{fd} vs {}",
            g[i]
        );
    }
}
