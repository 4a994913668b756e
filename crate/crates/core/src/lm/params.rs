use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl LmConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 128, context 256.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ff_dim: 512,
            context_len: 256,
            vocab_size,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return bad("layers, heads, model_dim and ff_dim must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.context_len < 8 {
            return bad(format!(
                "context_len must be >= 8, got {}",
                self.context_len
            ));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, t, d, f, l) = (
            self.vocab_size,
            self.context_len,
            self.model_dim,
            self.ff_dim,
            self.layers,
        );
        v * d + t * d + l * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d
    }
}

/// Location of one layer's tensors inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

/// A named tensor: `(name, range, shape, init, weight decay applies)`.
pub type TensorInfo = (String, Range<usize>, Vec<usize>, InitKind, bool);

impl Layout {
    pub fn new(cfg: &LmConfig) -> Self {
        let (v, t, d, f) = (cfg.vocab_size, cfg.context_len, cfg.model_dim, cfg.ff_dim);
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let wte = take(v * d);
        let wpe = take(t * d);
        let layers = (0..cfg.layers)
            .map(|_| LayerLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * f),
                b_fc: take(f),
                w_proj: take(f * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            total: at,
        }
    }

    /// Every tensor with its shape and initialisation rule.
    pub fn tensors(&self, cfg: &LmConfig) -> Vec<TensorInfo> {
        use InitKind::*;
        let (v, t, d, f) = (cfg.vocab_size, cfg.context_len, cfg.model_dim, cfg.ff_dim);
        let mut out = vec![
            (
                "wte".to_string(),
                self.wte.clone(),
                vec![v, d],
                Normal,
                true,
            ),
            (
                "wpe".to_string(),
                self.wpe.clone(),
                vec![t, d],
                Normal,
                true,
            ),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("h{i}.{s}");
            out.extend([
                (n("ln1.g"), l.ln1_g.clone(), vec![d], Ones, false),
                (n("ln1.b"), l.ln1_b.clone(), vec![d], Zeros, false),
                (
                    n("attn.w_qkv"),
                    l.w_qkv.clone(),
                    vec![d, 3 * d],
                    Normal,
                    true,
                ),
                (n("attn.b_qkv"), l.b_qkv.clone(), vec![3 * d], Zeros, false),
                (n("attn.w_o"), l.w_o.clone(), vec![d, d], Normal, true),
                (n("attn.b_o"), l.b_o.clone(), vec![d], Zeros, false),
                (n("ln2.g"), l.ln2_g.clone(), vec![d], Ones, false),
                (n("ln2.b"), l.ln2_b.clone(), vec![d], Zeros, false),
                (n("mlp.w_fc"), l.w_fc.clone(), vec![d, f], Normal, true),
                (n("mlp.b_fc"), l.b_fc.clone(), vec![f], Zeros, false),
                (n("mlp.w_proj"), l.w_proj.clone(), vec![f, d], Normal, true),
                (n("mlp.b_proj"), l.b_proj.clone(), vec![d], Zeros, false),
            ]);
        }
        out.push((
            "ln_f.g".to_string(),
            self.lnf_g.clone(),
            vec![d],
            Ones,
            false,
        ));
        out.push((
            "ln_f.b".to_string(),
            self.lnf_b.clone(),
            vec![d],
            Zeros,
            false,
        ));
        out
    }
}

/// Transformer parameters `θ` stored as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LmParams<F> {
    pub config: LmConfig,
    pub layout: Layout,
    pub data: Vec<F>,
}

impl<F: Scalar> LmParams<F> {
    /// Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init(config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![F::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        for (_, range, _, init, _) in layout.tensors(config) {
            for x in &mut data[range] {
                *x = match init {
                    InitKind::Normal => F::c(normal.sample(&mut rng)),
                    InitKind::Zeros => F::zero(),
                    InitKind::Ones => F::one(),
                };
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn from_data(config: LmConfig, data: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Scalar>(&self) -> LmParams<G> {
        LmParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::c(x.f64())).collect(),
        }
    }

    /// Ranges that receive decoupled weight decay (matrices and embeddings).
    pub fn decay_ranges(&self) -> Vec<Range<usize>> {
        self.layout
            .tensors(&self.config)
            .into_iter()
            .filter(|t| t.4)
            .map(|t| t.1)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LmConfig {
        LmConfig {
            layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 256,
            context_len: 32,
            vocab_size: 300,
            dropout: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn param_count_matches_hand_count() {
        let cfg = small();
        // Tensor by tensor for d=64, f=256, V=300, T=32, 2 layers:
        // wte 300*64 = 19200, wpe 32*64 = 2048
        // per layer: ln1 64+64, qkv 64*192+192, o 64*64+64, ln2 64+64,
        //            fc 64*256+256, proj 256*64+64 = 49984
        // ln_f 64+64 = 128
        let by_hand = 19200 + 2048 + 2 * 49984 + 128;
        assert_eq!(cfg.param_count(), by_hand);
        let p = LmParams::<f32>::init(&cfg).unwrap();
        assert_eq!(p.len(), by_hand);
        assert_eq!(p.layout.wte.len(), 300 * 64);
    }

    #[test]
    fn init_is_seeded() {
        let a = LmParams::<f32>::init(&small()).unwrap();
        let b = LmParams::<f32>::init(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 8;
        assert_ne!(LmParams::<f32>::init(&other).unwrap().data, a.data);
    }

    #[test]
    fn init_statistics() {
        let p = LmParams::<f64>::init(&small()).unwrap();
        let w = &p.data[p.layout.wte.clone()];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 1e-3);
        assert!((var.sqrt() - 0.02).abs() < 1e-3);
        let l = &p.layout.layers[0];
        assert!(p.data[l.b_qkv.clone()].iter().all(|&x| x == 0.0));
        assert!(p.data[l.ln1_g.clone()].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = small();
        c.context_len = 4;
        assert!(c.validate().is_err());
    }
}
