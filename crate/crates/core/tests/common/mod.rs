//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use imrec::data::{gen_synthetic, parse_behaviors_tsv, parse_news_tsv, Signal, SynthConfig, Vocab};
use imrec::dataset::{extract_features, has_cover, CheckpointMeta, ExtractorSpec, NewsTable};
use imrec::decompose::FeatureExtractor;
use imrec::eval::{evaluate, Slice};
use imrec::params::ParamStore;
use imrec::render::LayoutConfig;
use imrec::train::{train, TrainConfig, TrainOutcome};
use imrec::{EvalReport, NrmsIm, Tensor};

/// Central-difference gradient of `f` with respect to every value of `name`.
pub fn numeric_grad(
    params: &ParamStore<f64>,
    name: &str,
    h: f64,
    f: &dyn Fn(&ParamStore<f64>) -> f64,
) -> Tensor<f64> {
    let mut work = params.clone();
    let shape = params.get(name).unwrap().shape().to_vec();
    let n = params.get(name).unwrap().len();
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = work.get(name).unwrap().data()[i];
        work.get_mut(name).unwrap().data_mut()[i] = orig + h;
        let up = f(&work);
        work.get_mut(name).unwrap().data_mut()[i] = orig - h;
        let down = f(&work);
        work.get_mut(name).unwrap().data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Tensor::new(shape, out).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// 1-based rank of candidate `i`: one plus the number of candidates placed
/// ahead of it (higher score, or equal score and smaller index).
pub fn brute_rank(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

/// AUC by enumerating every positive/negative pair.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

pub fn brute_ndcg(scores: &[f64], labels: &[u8], k: usize) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let r = brute_rank(scores, i);
        if label == 1 && r <= k {
            dcg += 1.0 / ((r + 1) as f64).log2();
        }
    }
    let mut ideal = 0.0;
    for r in 1..=n_pos.min(k) {
        ideal += 1.0 / ((r + 1) as f64).log2();
    }
    dcg / ideal
}

pub fn brute_mrr(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let ranks: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1).map(|i| brute_rank(scores, i)).collect();
    (!ranks.is_empty()).then(|| ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Model size used by the desk-scale training runs.
pub const DESK_CONFIG: &str = "d_w=16\nd_h=16\nheads=2\nd_add=16\nd_c=32\nd_g=32\nlr=0.003\nepochs=5\n";

pub fn desk_config(seed: u64, mask_pct: u32, ablate: bool) -> TrainConfig {
    let mut text = format!("{DESK_CONFIG}seed={seed}\nmask_pct={mask_pct}\n");
    if ablate {
        text.push_str("l_im=false\ng_im=false\n");
    }
    TrainConfig::parse(&text).unwrap()
}

pub struct DeskRun {
    pub outcome: TrainOutcome,
    pub report: EvalReport,
    pub model: NrmsIm<f32>,
}

/// Synthesizes a corpus with the default generator settings, trains on its
/// train split and evaluates on dev, all in memory except the cover images.
pub fn desk_run(signal: Signal, cfg: &TrainConfig) -> DeskRun {
    let corpus = gen_synthetic(&SynthConfig { signal, ..SynthConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write(dir.path()).unwrap();
    let images = dir.path().join("images");
    let fx = FeatureExtractor::projection(cfg.seed, cfg.d_c, cfg.d_g);
    let features = extract_features(&corpus.news, Some(&images), &LayoutConfig::default(), &fx).unwrap();
    let vocab = Vocab::build(&corpus.news, 1);
    let table = NewsTable::build(&corpus.news, &vocab, &features, |n| has_cover(n, Some(&images)), cfg.max_title).unwrap();
    let mut model = NrmsIm::<f32>::new(cfg.model_config(vocab.len()), cfg.seed).unwrap();
    let outcome = train(cfg, &mut model, &corpus.train, &table, |_| {}).unwrap();
    let seen: BTreeSet<String> = corpus.train.iter().map(|b| b.user_id.clone()).collect();
    let report = evaluate(&model, &table, &corpus.dev, &seen, &Slice::defaults()).unwrap();
    DeskRun { outcome, report, model }
}

/// Bytes produced by one seeded chain run inside `dir`.
pub struct ChainOutput {
    pub report_json: String,
    pub log_csv: String,
    pub checkpoint: Vec<u8>,
}

/// Synthesize to disk, parse back, extract features, train, checkpoint,
/// reload and evaluate.
pub fn file_chain(dir: &Path, signal: Signal, cfg: &TrainConfig) -> ChainOutput {
    let corpus = gen_synthetic(&SynthConfig { signal, ..SynthConfig::default() }).unwrap();
    corpus.write(dir).unwrap();
    let images = dir.join("images");
    let news = parse_news_tsv(&dir.join("train/news.tsv")).unwrap().records;
    let train_b = parse_behaviors_tsv(&dir.join("train/behaviors.tsv")).unwrap().records;
    let dev_b = parse_behaviors_tsv(&dir.join("dev/behaviors.tsv")).unwrap().records;

    let fx = FeatureExtractor::projection(cfg.seed, cfg.d_c, cfg.d_g);
    let features = extract_features(&news, Some(&images), &LayoutConfig::default(), &fx).unwrap();
    let vocab = Vocab::build(&news, 1);
    let table = NewsTable::build(&news, &vocab, &features, |n| has_cover(n, Some(&images)), cfg.max_title).unwrap();
    let mut model = NrmsIm::<f32>::new(cfg.model_config(vocab.len()), cfg.seed).unwrap();
    let outcome = train(cfg, &mut model, &train_b, &table, |_| {}).unwrap();

    let ckpt = dir.join("model.ckpt");
    let meta = CheckpointMeta {
        model: model.config.clone(),
        vocab,
        extractor: ExtractorSpec::Projection { seed: cfg.seed, d_c: cfg.d_c, d_g: cfg.d_g },
        train_users: train_b.iter().map(|b| b.user_id.clone()).collect(),
    };
    imrec::dataset::save_model(&ckpt, &model, &meta).unwrap();
    let (loaded, meta) = imrec::dataset::load_model(&ckpt).unwrap();
    let report = evaluate(&loaded, &table, &dev_b, &meta.train_users, &Slice::defaults()).unwrap();
    ChainOutput {
        report_json: report.to_json(),
        log_csv: outcome.log_csv(),
        checkpoint: std::fs::read(&ckpt).unwrap(),
    }
}
