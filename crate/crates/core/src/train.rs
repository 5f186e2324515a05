//! Negative sampling, the grouped softmax loss and the training loop.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::BehaviorRecord;
use crate::dataset::NewsTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Slice};
use crate::model::{ModelConfig, NrmsIm};
use crate::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::tensor::{Scalar, Tensor};

pub const CLIP_NORM: f64 = 5.0;
pub const MASK_LEVELS: [u32; 5] = [0, 25, 50, 75, 100];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l_im: bool,
    pub g_im: bool,
    /// Percentage of news whose impression paths are disabled during training.
    pub mask_pct: u32,
    pub d_w: usize,
    pub d_h: usize,
    pub heads: usize,
    pub d_add: usize,
    pub d_c: usize,
    pub d_g: usize,
    pub max_title: usize,
    pub max_hist: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            k: 4,
            batch: 32,
            lr: 1e-4,
            epochs: 5,
            seed: 0,
            l_im: true,
            g_im: true,
            mask_pct: 0,
            d_w: m.d_w,
            d_h: m.d_h,
            heads: m.heads,
            d_add: m.d_add,
            d_c: m.d_c,
            d_g: m.d_g,
            max_title: m.max_title,
            max_hist: m.max_hist,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// Flat `key=value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (key, v) = (key.trim(), v.trim());
            match key {
                "k" => c.k = parse_num(key, v)?,
                "batch" => c.batch = parse_num(key, v)?,
                "lr" => c.lr = parse_num(key, v)?,
                "epochs" => c.epochs = parse_num(key, v)?,
                "seed" => c.seed = parse_num(key, v)?,
                "l_im" => c.l_im = parse_bool(key, v)?,
                "g_im" => c.g_im = parse_bool(key, v)?,
                "mask_pct" => c.mask_pct = parse_num(key, v)?,
                "d_w" => c.d_w = parse_num(key, v)?,
                "d_h" => c.d_h = parse_num(key, v)?,
                "heads" => c.heads = parse_num(key, v)?,
                "d_add" => c.d_add = parse_num(key, v)?,
                "d_c" => c.d_c = parse_num(key, v)?,
                "d_g" => c.d_g = parse_num(key, v)?,
                "max_title" => c.max_title = parse_num(key, v)?,
                "max_hist" => c.max_hist = parse_num(key, v)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "k={}\nbatch={}\nlr={}\nepochs={}\nseed={}\nl_im={}\ng_im={}\nmask_pct={}\nd_w={}\nd_h={}\nheads={}\nd_add={}\nd_c={}\nd_g={}\nmax_title={}\nmax_hist={}\n",
            self.k, self.batch, self.lr, self.epochs, self.seed, self.l_im, self.g_im, self.mask_pct, self.d_w,
            self.d_h, self.heads, self.d_add, self.d_c, self.d_g, self.max_title, self.max_hist
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch == 0 {
            return Err(Error::Config("k and batch must be at least 1".into()));
        }
        if !MASK_LEVELS.contains(&self.mask_pct) {
            return Err(Error::Config(format!("mask_pct must be one of {MASK_LEVELS:?}, got {}", self.mask_pct)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.model_config(2).validate()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_w: self.d_w,
            d_h: self.d_h,
            heads: self.heads,
            d_add: self.d_add,
            d_c: self.d_c,
            d_g: self.d_g,
            max_title: self.max_title,
            max_hist: self.max_hist,
            l_im: self.l_im,
            g_im: self.g_im,
        }
    }
}

/// One positive with `K` negatives from the same impression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainGroup {
    /// Index of the impression in the training behaviors.
    pub impression: usize,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// Groups for every click in `record`. Negatives are drawn without
/// replacement when at least `k` exist and with replacement otherwise. Returns
/// no groups when the impression has no negatives.
pub fn sample_negatives(record: &BehaviorRecord, impression: usize, k: usize, rng: &mut impl Rng) -> Vec<TrainGroup> {
    let mut negs: Vec<&str> = record.negatives().collect();
    if negs.is_empty() {
        return Vec::new();
    }
    record
        .positives()
        .map(|pos| {
            let negatives = if negs.len() >= k {
                let (chosen, _) = negs.partial_shuffle(rng, k);
                chosen.iter().map(|s| s.to_string()).collect()
            } else {
                (0..k).map(|_| negs.choose(rng).expect("non-empty").to_string()).collect()
            };
            TrainGroup {
                impression,
                positive: pos.to_string(),
                negatives,
            }
        })
        .collect()
}

/// `−log softmax(pos, negs)[0]` for one group, on raw logits.
pub fn ce_loss(pos: f64, negs: &[f64]) -> f64 {
    let max = negs.iter().copied().fold(pos, f64::max);
    let lse = max + (std::iter::once(pos).chain(negs.iter().copied()).map(|v| (v - max).exp()).sum::<f64>()).ln();
    lse - pos
}

/// Builds the batch-mean loss of `groups` on `g`. News in `masked` use the
/// text-only path.
pub fn batch_loss<'p>(
    model: &'p NrmsIm<f32>,
    g: &mut Graph<'p, f32>,
    groups: &[TrainGroup],
    behaviors: &[BehaviorRecord],
    table: &NewsTable,
    masked: &HashSet<String>,
) -> Result<Var> {
    if groups.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut news: HashMap<String, Var> = HashMap::new();
    let mut encode = |g: &mut Graph<'p, f32>, id: &str| -> Result<Var> {
        if let Some(&v) = news.get(id) {
            return Ok(v);
        }
        let entry = table.get(id)?;
        let out = model.encode_news_as(g, &entry.input, !masked.contains(id))?;
        news.insert(id.to_string(), out.e_star);
        Ok(out.e_star)
    };
    let mut users: HashMap<usize, Var> = HashMap::new();
    let mut rows = Vec::with_capacity(groups.len());
    for grp in groups {
        let u = match users.get(&grp.impression) {
            Some(&u) => u,
            None => {
                let hist = &behaviors[grp.impression].history;
                let recent = &hist[hist.len().saturating_sub(model.config.max_hist)..];
                let vars = recent.iter().map(|id| encode(g, id)).collect::<Result<Vec<_>>>()?;
                let u = model.encode_user(g, &vars)?.u;
                users.insert(grp.impression, u);
                u
            }
        };
        let mut cands = vec![encode(g, &grp.positive)?];
        for n in &grp.negatives {
            cands.push(encode(g, n)?);
        }
        let c = g.concat(&cands, 0)?;
        let logits = g.matmul_t(c, u)?;
        rows.push(g.transpose(logits)?);
    }
    let all = g.concat(&rows, 0)?;
    grouped_softmax_loss(g, all)
}

/// Batch mean of `−log softmax(row)[0]` over a `B x (1+K)` logit matrix whose
/// first column holds the positives.
pub fn grouped_softmax_loss<T: Scalar>(g: &mut Graph<'_, T>, logits: Var) -> Result<Var> {
    let logp = g.log_softmax_rows(logits)?;
    let cols = g.transpose(logp)?;
    let first = g.gather(cols, &[0])?;
    let mean = g.mean(first)?;
    g.scale(mean, -1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub auc_train: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub log: Vec<EpochStats>,
    /// Impressions with clicks but no non-clicked candidate, per epoch.
    pub skipped_groups: usize,
    pub masked_news: BTreeSet<String>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,loss,auc_train\n");
        for e in &self.log {
            let _ = writeln!(out, "{},{:.6},{:.6}", e.epoch, e.loss, e.auc_train);
        }
        out
    }
}

/// The news whose impressions are hidden for this run: `mask_pct` percent of
/// the table, chosen once from the run seed.
pub fn masked_news(table: &NewsTable, mask_pct: u32, seed: u64) -> BTreeSet<String> {
    let mut ids = table.ids();
    let n = (ids.len() * mask_pct as usize + 50) / 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.into_iter().take(n).map(str::to_string).collect()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains `model` in place. `on_epoch` sees each epoch's stats as they finish.
pub fn train(
    cfg: &TrainConfig,
    model: &mut NrmsIm<f32>,
    behaviors: &[BehaviorRecord],
    table: &NewsTable,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let masked = masked_news(table, cfg.mask_pct, cfg.seed);
    let masked_set: HashSet<String> = masked.iter().cloned().collect();
    let users: BTreeSet<String> = behaviors.iter().map(|b| b.user_id.clone()).collect();
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut outcome = TrainOutcome {
        masked_news: masked,
        ..TrainOutcome::default()
    };
    for epoch in 1..=cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut groups = Vec::new();
        for (i, b) in behaviors.iter().enumerate() {
            let got = sample_negatives(b, i, cfg.k, &mut rng);
            if got.is_empty() && b.positives().next().is_some() {
                outcome.skipped_groups += 1;
            }
            groups.extend(got);
        }
        if groups.is_empty() {
            return Err(Error::Contract("no training groups: every impression lacks a click or a non-click".into()));
        }
        groups.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in groups.chunks(cfg.batch).enumerate() {
            let mut grads: BTreeMap<String, Tensor<f32>> = {
                let mut g = Graph::new();
                let loss = batch_loss(model, &mut g, batch, behaviors, table, &masked_set)
                    .map_err(|e| diverged(e, epoch, bi))?;
                let value = g.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::Divergence(format!("loss {value} at epoch {epoch}, batch {bi}")));
                }
                total += value * batch.len() as f64;
                let grads = g.backward(loss).map_err(|e| diverged(e, epoch, bi))?;
                grads.named().map(|(n, t)| (n.to_string(), t.clone())).collect()
            };
            clip_global_norm(&mut grads, CLIP_NORM);
            adam.step(&mut model.params, &grads)?;
        }
        let report = evaluate(model, table, behaviors, &users, &[Slice::ALL])?;
        let stats = EpochStats {
            epoch,
            loss: total / groups.len() as f64,
            auc_train: report.slices[0].auc.unwrap_or(f64::NAN),
        };
        on_epoch(&stats);
        outcome.log.push(stats);
    }
    Ok(outcome)
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence(d) => Error::Divergence(format!("{d} (epoch {epoch}, batch {batch})")),
        other => other,
    }
}
