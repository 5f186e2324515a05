use serde::{Deserialize, Serialize};

use super::{additive_pool, linear, multi_head, NrmsIm};
use crate::autodiff::{Graph, Var};
use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Everything the news encoder consumes for one item.
#[derive(Clone, Debug, PartialEq)]
pub struct NewsInput<T: Scalar = f32> {
    /// Vocabulary ids; `PAD` positions are masked out.
    pub tokens: Vec<usize>,
    /// Cue memory, `|O| x d_c`. Zero rows means no cues.
    pub cues: Tensor<T>,
    /// Global impression, `1 x d_g`.
    pub global: Tensor<T>,
    /// `false` routes the item through the text-only path.
    pub impression: bool,
}

impl<T: Scalar> NewsInput<T> {
    pub fn text_only(tokens: Vec<usize>, d_c: usize, d_g: usize) -> Self {
        Self {
            tokens,
            cues: Tensor::zeros(&[0, d_c]),
            global: Tensor::zeros(&[1, d_g]),
            impression: false,
        }
    }

    pub fn cast<U: Scalar>(&self) -> NewsInput<U> {
        NewsInput {
            tokens: self.tokens.clone(),
            cues: self.cues.cast(),
            global: self.global.cast(),
            impression: self.impression,
        }
    }
}

/// Graph handles produced by one news encoding.
#[derive(Clone, Debug)]
pub struct NewsOutput {
    /// Title-semantic vector `e`, `1 x d_h`.
    pub e: Var,
    /// Final representation `e*`, `1 x d_h`.
    pub e_star: Var,
    /// Gate value `a`, `1 x 1`, when the global path ran.
    pub gate: Option<Var>,
    /// Memory weights, `n x |O|`, when the local path ran with cues.
    pub alpha_v: Option<Var>,
    /// Per-head title self-attention weights, `n x n` each.
    pub self_weights: Vec<Var>,
    /// Additive weights, `1 x n`.
    pub alpha_a: Var,
    pub keep: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub alpha_v: Vec<Vec<f64>>,
    pub self_weights: Vec<Vec<Vec<f64>>>,
    pub alpha_a: Vec<f64>,
    pub gate: Option<f64>,
}

fn rows_of<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row_slice(i).iter().map(|v| v.as_f64()).collect()).collect()
}

impl NewsOutput {
    pub fn record<T: Scalar>(&self, g: &Graph<'_, T>) -> AttentionRecord {
        AttentionRecord {
            alpha_v: self.alpha_v.map(|a| rows_of(g.value(a))).unwrap_or_default(),
            self_weights: self.self_weights.iter().map(|&w| rows_of(g.value(w))).collect(),
            alpha_a: g.value(self.alpha_a).data().iter().map(|v| v.as_f64()).collect(),
            gate: self.gate.map(|a| g.value(a).data()[0].as_f64()),
        }
    }
}

impl<T: Scalar> NrmsIm<T> {
    /// Memory attention: `α = softmax(q_m(w_i)·k_m(o_j))`,
    /// `ŵ_i = Σ_j α_ij v_m(o_j) + v(w_i)`. Without cues only `v(w_i)` remains.
    pub fn memory_attend<'p>(&'p self, g: &mut Graph<'p, T>, words: Var, cues: Var) -> Result<(Var, Option<Var>)> {
        let own = linear(g, &self.params, "mem.word", words)?;
        if g.value(cues).rows() == 0 {
            return Ok((own, None));
        }
        let q = linear(g, &self.params, "mem.q", words)?;
        let k = linear(g, &self.params, "mem.k", cues)?;
        let v = linear(g, &self.params, "mem.v", cues)?;
        let s = g.matmul_t(q, k)?;
        let alpha = g.softmax_rows(s, None)?;
        let read = g.matmul(alpha, v)?;
        Ok((g.add(read, own)?, Some(alpha)))
    }

    /// `õ = P_g(o*)`, `a = σ(g([e; õ]))`, `e* = a·e + (1 − a)·õ`.
    pub fn global_gate<'p>(&'p self, g: &mut Graph<'p, T>, e: Var, global: Var) -> Result<(Var, Var)> {
        let o = linear(g, &self.params, "gate.proj", global)?;
        let both = g.concat(&[e, o], 1)?;
        let logit = linear(g, &self.params, "gate.g", both)?;
        let a = g.sigmoid(logit)?;
        let ones = g.constant(Tensor::full(&[1, 1], T::one()));
        let neg_a = g.scale(a, -1.0)?;
        let rest = g.add(ones, neg_a)?;
        let kept = g.mul(a, e)?;
        let mixed = g.mul(rest, o)?;
        Ok((g.add(kept, mixed)?, a))
    }

    pub fn encode_news<'p>(&'p self, g: &mut Graph<'p, T>, input: &NewsInput<T>) -> Result<NewsOutput> {
        self.encode_news_as(g, input, input.impression)
    }

    /// Like [`encode_news`](Self::encode_news) with the impression paths
    /// allowed only when both `impression` and the input's own flag are set.
    pub fn encode_news_as<'p>(&'p self, g: &mut Graph<'p, T>, input: &NewsInput<T>, impression: bool) -> Result<NewsOutput> {
        let cfg = &self.config;
        let impression = impression && input.impression;
        let tokens = &input.tokens[..input.tokens.len().min(cfg.max_title)];
        let keep: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
        if !keep.contains(&true) {
            return Err(Error::EmptyTitle);
        }
        let mask = if keep.iter().all(|&k| k) { None } else { Some(keep.as_slice()) };
        let table = g.param("emb", self.params.get("emb")?);
        let mut words = g.gather(table, tokens)?;
        let mut alpha_v = None;
        if cfg.l_im && impression {
            if input.cues.rows() > 0 && input.cues.cols() != cfg.d_c {
                return Err(Error::Dimension(format!("cues are {:?}, d_c = {}", input.cues.shape(), cfg.d_c)));
            }
            let cues = g.input(input.cues.clone());
            let (w, a) = self.memory_attend(g, words, cues)?;
            words = w;
            alpha_v = a;
        }
        let (w_star, self_weights) = multi_head(g, &self.params, "title", cfg.heads, words, mask)?;
        let (e, alpha_a) = additive_pool(g, &self.params, "title.add", w_star, mask)?;
        let (e_star, gate) = if cfg.g_im && impression {
            if input.global.len() != cfg.d_g {
                return Err(Error::Dimension(format!("global impression has {} values, d_g = {}", input.global.len(), cfg.d_g)));
            }
            let global = g.input(input.global.clone().reshape(vec![1, cfg.d_g])?);
            let (es, a) = self.global_gate(g, e, global)?;
            (es, Some(a))
        } else {
            (e, None)
        };
        Ok(NewsOutput {
            e,
            e_star,
            gate,
            alpha_v,
            self_weights,
            alpha_a,
            keep,
        })
    }

    /// Forward-only news vector `e*` as a plain row.
    pub fn news_vector(&self, input: &NewsInput<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let out = self.encode_news(&mut g, input)?;
        Ok(g.value(out.e_star).clone())
    }

    pub fn attention(&self, input: &NewsInput<T>) -> Result<(Tensor<T>, AttentionRecord)> {
        let mut g = Graph::new();
        let out = self.encode_news(&mut g, input)?;
        Ok((g.value(out.e_star).clone(), out.record(&g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::small;
    use crate::model::ModelConfig;
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    fn input(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, n_cues: usize) -> NewsInput<f64> {
        let mut r = |len| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let cues = Tensor::new(vec![n_cues, cfg.d_c], r(n_cues * cfg.d_c)).unwrap();
        let global = Tensor::row(r(cfg.d_g));
        let tokens = (0..n).map(|i| 2 + i % (cfg.vocab_size - 2)).collect();
        NewsInput { tokens, cues, global, impression: true }
    }

    #[test]
    fn memory_attend_two_cue_example() {
        let cfg = ModelConfig { d_w: 2, d_c: 2, ..small() };
        let mut m = NrmsIm::<f64>::new(cfg, 0).unwrap();
        let mut p = ParamStore::new();
        for (name, t) in m.params.iter() {
            p.insert(name, t.clone());
        }
        // identity transforms in a 2-d memory space, zero biases
        let mut pad_eye = |name: &str, rows: usize, cols: usize| {
            let mut t = Tensor::zeros(&[rows, cols]);
            for i in 0..rows.min(cols) {
                t.data_mut()[i * cols + i] = 1.0;
            }
            p.insert(format!("{name}.w"), t);
            p.insert(format!("{name}.b"), Tensor::zeros(&[1, cols]));
        };
        pad_eye("mem.q", 2, super::super::MEMORY_DIM);
        pad_eye("mem.k", 2, super::super::MEMORY_DIM);
        pad_eye("mem.v", 2, 2);
        pad_eye("mem.word", 2, 2);
        m.params = p;
        let mut g = Graph::new();
        let w = g.input(Tensor::row(vec![1.0, 0.0]));
        let o = g.input(eye(2));
        let (out, alpha) = m.memory_attend(&mut g, w, o).unwrap();
        let e = std::f64::consts::E;
        let a = g.value(alpha.unwrap()).data().to_vec();
        assert!((a[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((a[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        let v = g.value(out).data();
        assert!((v[0] - 1.7311).abs() < 1e-4 && (v[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn single_cue_reads_it_fully() {
        let cfg = small();
        let m = NrmsIm::<f64>::new(cfg.clone(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inp = input(&mut rng, &cfg, 3, 1);
        let mut g = Graph::new();
        let out = m.encode_news(&mut g, &inp).unwrap();
        assert!(g.value(out.alpha_v.unwrap()).data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn empty_cues_fall_back_to_word_transform() {
        let cfg = small();
        let m = NrmsIm::<f64>::new(cfg.clone(), 2).unwrap();
        let mut g = Graph::new();
        let w = g.input(Tensor::row(vec![0.5; cfg.d_w]));
        let o = g.input(Tensor::zeros(&[0, cfg.d_c]));
        let (out, alpha) = m.memory_attend(&mut g, w, o).unwrap();
        assert!(alpha.is_none());
        let mut h = Graph::new();
        let w2 = h.input(Tensor::row(vec![0.5; cfg.d_w]));
        let expect = linear(&mut h, &m.params, "mem.word", w2).unwrap();
        assert_eq!(g.value(out), h.value(expect));
    }

    #[test]
    fn gate_zero_and_saturated() {
        let cfg = small();
        let mut m = NrmsIm::<f64>::new(cfg.clone(), 2).unwrap();
        *m.params.get_mut("gate.g.w").unwrap() = Tensor::zeros(&[2 * cfg.d_h, 1]);
        let e_val = Tensor::row((0..cfg.d_h).map(|i| i as f64 * 0.1).collect());
        let o_val = Tensor::row(vec![0.3; cfg.d_g]);
        let run = |m: &NrmsIm<f64>| {
            let mut g = Graph::new();
            let e = g.input(e_val.clone());
            let o = g.input(o_val.clone());
            let (es, a) = m.global_gate(&mut g, e, o).unwrap();
            let proj = linear(&mut g, &m.params, "gate.proj", o).unwrap();
            (g.value(es).clone(), g.value(a).data()[0], g.value(proj).clone())
        };
        let (es, a, proj) = run(&m);
        assert_eq!(a, 0.5);
        for i in 0..cfg.d_h {
            assert!((es.data()[i] - 0.5 * (e_val.data()[i] + proj.data()[i])).abs() < 1e-12);
        }
        *m.params.get_mut("gate.g.b").unwrap() = Tensor::full(&[1, 1], 20.0);
        let (es, a, _) = run(&m);
        assert!(a < 1.0 && a > 1.0 - 1e-8);
        let diff: f64 = es.data().iter().zip(e_val.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-6 * e_val.norm_sq().sqrt() + 1e-8);
    }

    #[test]
    fn attention_rows_are_normalized() {
        let cfg = small();
        let m = NrmsIm::<f64>::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..6 {
            let inp = input(&mut rng, &cfg, n, 4 + n);
            let (_, rec) = m.attention(&inp).unwrap();
            assert_eq!(rec.alpha_v.len(), n);
            for row in rec.alpha_v.iter().chain(rec.self_weights.iter().flatten()) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!((rec.alpha_a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let a = rec.gate.unwrap();
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn padding_is_invisible() {
        let cfg = small();
        let m = NrmsIm::<f64>::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inp = input(&mut rng, &cfg, 3, 5);
        let mut padded = inp.clone();
        padded.tokens.extend([PAD, PAD]);
        let (a, _) = m.attention(&inp).unwrap();
        let (b, rec) = m.attention(&padded).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(&rec.alpha_a[3..], &[0.0, 0.0]);
        for head in &rec.self_weights {
            for row in head {
                assert_eq!(&row[3..], &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn long_title_is_truncated() {
        let cfg = ModelConfig { vocab_size: 30, ..small() };
        let m = NrmsIm::<f64>::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let long = input(&mut rng, &cfg, 20, 5);
        let mut short = long.clone();
        short.tokens.truncate(15);
        assert_eq!(m.news_vector(&long).unwrap(), m.news_vector(&short).unwrap());
    }

    #[test]
    fn all_padding_is_rejected() {
        let cfg = small();
        let m = NrmsIm::<f64>::new(cfg.clone(), 5).unwrap();
        let inp = NewsInput::<f64>::text_only(vec![PAD, PAD], cfg.d_c, cfg.d_g);
        assert!(matches!(m.news_vector(&inp), Err(Error::EmptyTitle)));
    }

    #[test]
    fn text_only_path_skips_impression_parameters() {
        let cfg = small();
        let m = NrmsIm::<f64>::new(cfg.clone(), 5).unwrap();
        let inp = NewsInput::<f64>::text_only(vec![2, 3, 4], cfg.d_c, cfg.d_g);
        let mut g = Graph::new();
        m.encode_news(&mut g, &inp).unwrap();
        assert!(g.param_names().all(|n| !n.starts_with("mem.") && !n.starts_with("gate.")));
        // the full model on a text-only item equals the ablated model
        let ablated = NrmsIm::from_params(
            ModelConfig { l_im: false, g_im: false, ..cfg.clone() },
            {
                let mut p = ParamStore::new();
                for (n, t) in m.params.iter().filter(|(n, _)| !n.starts_with("mem.") && !n.starts_with("gate.")) {
                    p.insert(n, t.clone());
                }
                p
            },
        )
        .unwrap();
        let mut with_cues = inp.clone();
        with_cues.impression = true;
        with_cues.cues = Tensor::full(&[4, cfg.d_c], 0.2);
        with_cues.global = Tensor::full(&[1, cfg.d_g], 0.1);
        assert_eq!(m.news_vector(&inp).unwrap(), ablated.news_vector(&with_cues).unwrap());
    }
}
