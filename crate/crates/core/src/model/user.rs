use super::{additive_pool, multi_head, stack_rows, NrmsIm};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct UserOutput {
    /// User vector `u`, `1 x d_h`.
    pub u: Var,
    pub self_weights: Vec<Var>,
    /// Additive weights `β`, `1 x T`; absent for an empty history.
    pub beta: Option<Var>,
}

impl<T: Scalar> NrmsIm<T> {
    /// Aggregates clicked-news vectors (oldest first, each `1 x d_h`). Only the
    /// most recent `max_hist` take part; an empty history yields `u = 0`.
    pub fn encode_user<'p>(&'p self, g: &mut Graph<'p, T>, history: &[Var]) -> Result<UserOutput> {
        let start = history.len().saturating_sub(self.config.max_hist);
        let history = &history[start..];
        if history.is_empty() {
            let u = g.constant(Tensor::zeros(&[1, self.config.d_h]));
            return Ok(UserOutput {
                u,
                self_weights: Vec::new(),
                beta: None,
            });
        }
        let stacked = g.concat(history, 0)?;
        let (enhanced, self_weights) = multi_head(g, &self.params, "user", self.config.heads, stacked, None)?;
        let (u, beta) = additive_pool(g, &self.params, "user.add", enhanced, None)?;
        Ok(UserOutput {
            u,
            self_weights,
            beta: Some(beta),
        })
    }

    /// Forward-only user vector from precomputed news vectors.
    pub fn user_vector(&self, history: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let start = history.len().saturating_sub(self.config.max_hist);
        let history = &history[start..];
        if history.is_empty() {
            return Ok(Tensor::zeros(&[1, self.config.d_h]));
        }
        let mut g = Graph::new();
        let stacked = g.input(stack_rows(history)?);
        let (enhanced, _) = multi_head(&mut g, &self.params, "user", self.config.heads, stacked, None)?;
        let (u, _) = additive_pool(&mut g, &self.params, "user.add", enhanced, None)?;
        Ok(g.value(u).clone())
    }
}
