//! Adapter that adds the global impression to an arbitrary matcher's output
//! vector: `ŷ = Q2ᵀ(s ⊕ (Q1ᵀo* + b1)) + b2`. The score is left raw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct MatchingFusion<T: Scalar = f32> {
    pub s_dim: usize,
    pub d_s: usize,
    pub d_g: usize,
    pub params: ParamStore<T>,
}

impl<T: Scalar> MatchingFusion<T> {
    pub fn new(s_dim: usize, d_s: usize, d_g: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.add_linear("fuse.q1", d_g, d_s, true, &mut rng);
        params.add_linear("fuse.q2", s_dim + d_s, 1, true, &mut rng);
        Self { s_dim, d_s, d_g, params }
    }

    fn check(&self, s: usize, o: usize) -> Result<()> {
        if s != self.s_dim || o != self.d_g {
            return Err(Error::Dimension(format!(
                "fusion expects s of {} and o* of {}, got {s} and {o}",
                self.s_dim, self.d_g
            )));
        }
        Ok(())
    }

    /// Graph form over `1 x |s|` and `1 x d_g` rows.
    pub fn fuse<'p>(&'p self, g: &mut Graph<'p, T>, s: Var, global: Var) -> Result<Var> {
        self.check(g.value(s).len(), g.value(global).len())?;
        let proj = super::linear(g, &self.params, "fuse.q1", global)?;
        let joined = g.concat(&[s, proj], 1)?;
        super::linear(g, &self.params, "fuse.q2", joined)
    }

    pub fn score(&self, s: &[T], global: &[T]) -> Result<T> {
        self.check(s.len(), global.len())?;
        let mut g = Graph::new();
        let s = g.input(Tensor::row(s.to_vec()));
        let o = g.input(Tensor::row(global.to_vec()));
        let y = self.fuse(&mut g, s, o)?;
        Ok(g.value(y).data()[0])
    }
}
