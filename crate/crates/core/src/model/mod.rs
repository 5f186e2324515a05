//! NRMS-style recommender with local (cue memory) and global (gated card
//! embedding) impression modeling.
//!
//! Every forward pass is written against a [`Graph`], so the same code serves
//! training, inference and gradient checking.

mod fusion;
mod news;
mod user;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub use fusion::MatchingFusion;
pub use news::{AttentionRecord, NewsInput, NewsOutput};
pub use user::UserOutput;

/// Inner dimension of the memory attention.
pub const MEMORY_DIM: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_w: usize,
    pub d_h: usize,
    pub heads: usize,
    pub d_add: usize,
    pub d_c: usize,
    pub d_g: usize,
    pub max_title: usize,
    pub max_hist: usize,
    /// Local impression modeling (memory attention over cues).
    pub l_im: bool,
    /// Global impression modeling (gated card embedding).
    pub g_im: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            d_w: 100,
            d_h: 150,
            heads: 3,
            d_add: 200,
            d_c: 512,
            d_g: 2048,
            max_title: 15,
            max_hist: 60,
            l_im: true,
            g_im: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.d_w, self.d_h, self.heads, self.d_add, self.d_c, self.d_g];
        if dims.contains(&0) || self.max_title == 0 || self.max_hist == 0 {
            return Err(Error::Config(format!("zero-sized model dimension in {self:?}")));
        }
        if !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_h={} is not divisible by heads={}", self.d_h, self.heads)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_h / self.heads
    }
}

/// Parameter names of the plain NRMS encoder (both impression paths off).
pub fn nrms_param_names(cfg: &ModelConfig) -> Vec<String> {
    let mut names = vec!["emb".to_string()];
    for side in ["title", "user"] {
        for h in 0..cfg.heads {
            for p in ["q", "k", "v"] {
                for s in ["w", "b"] {
                    names.push(format!("{side}.h{h}.{p}.{s}"));
                }
            }
        }
        for p in ["k", "q"] {
            for s in ["w", "b"] {
                names.push(format!("{side}.add.{p}.{s}"));
            }
        }
    }
    names.sort();
    names
}

#[derive(Clone, Debug)]
pub struct NrmsIm<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> NrmsIm<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        p.insert("emb", crate::params::glorot_uniform(c.vocab_size, c.d_w, &mut rng));
        if c.l_im {
            p.add_linear("mem.q", c.d_w, MEMORY_DIM, true, &mut rng);
            p.add_linear("mem.k", c.d_c, MEMORY_DIM, true, &mut rng);
            p.add_linear("mem.v", c.d_c, c.d_w, true, &mut rng);
            p.add_linear("mem.word", c.d_w, c.d_w, true, &mut rng);
        }
        for h in 0..c.heads {
            for k in ["q", "k", "v"] {
                p.add_linear(&format!("title.h{h}.{k}"), c.d_w, c.head_dim(), true, &mut rng);
            }
        }
        p.add_linear("title.add.k", c.d_h, c.d_add, true, &mut rng);
        p.add_linear("title.add.q", c.d_add, 1, true, &mut rng);
        if c.g_im {
            p.add_linear("gate.proj", c.d_g, c.d_h, true, &mut rng);
            p.add_linear("gate.g", 2 * c.d_h, 1, true, &mut rng);
        }
        for h in 0..c.heads {
            for k in ["q", "k", "v"] {
                p.add_linear(&format!("user.h{h}.{k}"), c.d_h, c.head_dim(), true, &mut rng);
            }
        }
        p.add_linear("user.add.k", c.d_h, c.d_add, true, &mut rng);
        p.add_linear("user.add.q", c.d_add, 1, true, &mut rng);
        Ok(Self { config, params: p })
    }

    /// Wraps existing parameters, checking every expected tensor is present
    /// with the configured shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = NrmsIm::<T>::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {name} has shape {:?}, config expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> NrmsIm<U> {
        NrmsIm {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Raw matching logit `cᵀu` for `1 x d_h` rows.
    pub fn logit<'p>(g: &mut Graph<'p, T>, candidate: Var, user: Var) -> Result<Var> {
        g.matmul_t(candidate, user)
    }
}

/// Click probability `σ(cᵀu)`.
pub fn score<T: Scalar>(user: &[T], candidate: &[T]) -> f64 {
    assert_eq!(user.len(), candidate.len(), "user and candidate dimensions differ");
    let dot: f64 = user.iter().zip(candidate).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    crate::tensor::sigmoid(dot)
}

pub(crate) fn linear<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = g.param(&format!("{prefix}.w"), params.get(&format!("{prefix}.w"))?);
    let b = g.param(&format!("{prefix}.b"), params.get(&format!("{prefix}.b"))?);
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

/// Multi-head self-attention with per-head q/k/v transforms; keys outside
/// `keep` receive no weight. Returns the concatenated output and each head's
/// weight matrix.
pub(crate) fn multi_head<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParamStore<T>,
    prefix: &str,
    heads: usize,
    x: Var,
    keep: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let n = g.value(x).rows();
    let mask = keep.map(|k| {
        assert_eq!(k.len(), n);
        (0..n * n).map(|i| k[i % n]).collect::<Vec<bool>>()
    });
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = linear(g, params, &format!("{prefix}.h{h}.q"), x)?;
        let k = linear(g, params, &format!("{prefix}.h{h}.k"), x)?;
        let v = linear(g, params, &format!("{prefix}.h{h}.v"), x)?;
        let s = g.matmul_t(q, k)?;
        let a = g.softmax_rows(s, mask.clone())?;
        outs.push(g.matmul(a, v)?);
        weights.push(a);
    }
    Ok((g.concat(&outs, 1)?, weights))
}

/// Additive attention pooling: `α = softmax(q(tanh(k(x))))`, returns
/// `(α·x, α)` with `α` as a `1 x n` row.
pub(crate) fn additive_pool<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParamStore<T>,
    prefix: &str,
    x: Var,
    keep: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let hidden = linear(g, params, &format!("{prefix}.k"), x)?;
    let hidden = g.tanh(hidden)?;
    let s = linear(g, params, &format!("{prefix}.q"), hidden)?;
    let s = g.transpose(s)?;
    let alpha = g.softmax_rows(s, keep.map(<[bool]>::to_vec))?;
    Ok((g.matmul(alpha, x)?, alpha))
}

/// Row-stacked tensor of `rows`, each `1 x d`.
pub fn stack_rows<T: Scalar>(rows: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::Dimension(format!("row of length {} among rows of length {d}", r.len())));
        }
        data.extend_from_slice(r.data());
    }
    Tensor::new(vec![rows.len(), d], data)
}
