//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use imrec::autodiff::{Graph, Var};
use imrec::data::{gen_synthetic, Signal, SynthConfig, PAD};
use imrec::decompose::{split_regions, FeatureExtractor};
use imrec::metrics::{auc, mrr, ndcg_at_k};
use imrec::model::nrms_param_names;
use imrec::params::ParamStore;
use imrec::render::{render_with_cover_dir, LayoutConfig};
use imrec::train::{ce_loss, grouped_softmax_loss};
use imrec::{ModelConfig, NewsInput, NrmsIm, Tensor};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_matrix<T: imrec::Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    let data = (0..rows * cols).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

// ---------------------------------------------------------------- 1

fn gradcheck_loss<'p>(model: &'p NrmsIm<f64>, g: &mut Graph<'p, f64>, news: &[NewsInput<f64>]) -> Var {
    let vecs: Vec<Var> = news.iter().map(|n| model.encode_news(g, n).unwrap().e_star).collect();
    let u = model.encode_user(g, &vecs[..2]).unwrap().u;
    let mut rows = Vec::new();
    for group in [[2, 3, 4], [3, 4, 2]] {
        let c = g.concat(&group.map(|i| vecs[i]), 0).unwrap();
        let logits = g.matmul_t(c, u).unwrap();
        rows.push(g.transpose(logits).unwrap());
    }
    let all = g.concat(&rows, 0).unwrap();
    grouped_softmax_loss(g, all).unwrap()
}

fn criterion_gradcheck() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        vocab_size: 10,
        d_w: 8,
        d_h: 8,
        heads: 2,
        d_add: 8,
        d_c: 8,
        d_g: 16,
        ..ModelConfig::default()
    };
    let mut model = NrmsIm::<f64>::new(cfg.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    // two history items and three candidates, 3 tokens and 5 cues each; the
    // second item carries a padded position
    let news: Vec<NewsInput<f64>> = (0..5)
        .map(|i| NewsInput {
            tokens: if i == 1 { vec![4, 7, PAD] } else { (0..3).map(|_| rng.random_range(1..10)).collect() },
            cues: random_matrix(&mut rng, 5, cfg.d_c),
            global: random_matrix(&mut rng, 1, cfg.d_g),
            impression: true,
        })
        .collect();

    let mut g = Graph::new();
    let loss = gradcheck_loss(&model, &mut g, &news);
    let grads = g.backward(loss).unwrap();

    let f = |p: &ParamStore<f64>| {
        let m = NrmsIm::from_params(cfg.clone(), p.clone()).unwrap();
        let mut g = Graph::new();
        let l = gradcheck_loss(&m, &mut g, &news);
        g.value(l).data()[0]
    };
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in &names {
        let Some(analytic) = grads.param(name) else {
            return Err(format!("no gradient reached {name}"));
        };
        let numeric = numeric_grad(&model.params, name, 1e-5, &f);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            if a.abs().max(n.abs()) > 1e-6 {
                checked += 1;
                let e = rel_err(*a, *n, 1e-6);
                if e > worst.0 {
                    worst = (e, name.clone());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst.0 < 1e-4 && secs < 60.0,
        format!(
            "{} groups, {checked} entries, max rel err {:.2e} ({})",
            names.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---------------------------------------------------------------- 2

#[derive(Default)]
struct RowAudit {
    rows: usize,
    worst_sum: f64,
    masked_nonzero: usize,
}

impl RowAudit {
    fn check(&mut self, t: &Tensor<f32>, keep: Option<&[bool]>) {
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            self.worst_sum = self.worst_sum.max((s - 1.0).abs());
            self.rows += 1;
            if let Some(keep) = keep {
                self.masked_nonzero += row.iter().zip(keep).filter(|(&v, &k)| !k && v != 0.0).count();
            }
        }
    }
}

fn criterion_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut audit = RowAudit::default();
    let mut masked_positions = 0;
    for pass in 0..100 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let cfg = ModelConfig {
            vocab_size: 30,
            d_w: rng.random_range(4..=12),
            d_h: heads * rng.random_range(2..=4),
            heads,
            d_add: rng.random_range(4..=10),
            d_c: rng.random_range(3..=8),
            d_g: rng.random_range(3..=8),
            max_hist: 6,
            ..ModelConfig::default()
        };
        let model = NrmsIm::<f32>::new(cfg.clone(), pass).unwrap();
        let mut g = Graph::new();
        let mut vecs = Vec::new();
        for _ in 0..rng.random_range(1..=8) {
            let len = rng.random_range(1..=18);
            let mut tokens: Vec<usize> =
                (0..len).map(|_| if rng.random_bool(0.3) { PAD } else { rng.random_range(1..30) }).collect();
            tokens[0] = rng.random_range(1..30);
            let n_cues = if rng.random_bool(0.1) { 0 } else { rng.random_range(1..=25) };
            let input = NewsInput {
                tokens,
                cues: random_matrix(&mut rng, n_cues, cfg.d_c),
                global: random_matrix(&mut rng, 1, cfg.d_g),
                impression: true,
            };
            let out = model.encode_news(&mut g, &input).unwrap();
            masked_positions += out.keep.iter().filter(|&&k| !k).count();
            if let Some(a) = out.alpha_v {
                audit.check(g.value(a), None);
            }
            for &w in &out.self_weights {
                audit.check(g.value(w), Some(&out.keep));
            }
            audit.check(g.value(out.alpha_a), Some(&out.keep));
            vecs.push(out.e_star);
        }
        let user = model.encode_user(&mut g, &vecs).unwrap();
        for &w in &user.self_weights {
            audit.check(g.value(w), None);
        }
        audit.check(g.value(user.beta.unwrap()), None);
    }
    ensure(
        audit.worst_sum <= 1e-5 && audit.masked_nonzero == 0 && masked_positions > 0,
        format!(
            "{} rows, max |sum - 1| {:.2e}, {} nonzero masked weights over {masked_positions} padded positions",
            audit.rows, audit.worst_sum, audit.masked_nonzero
        ),
    )
}

// ---------------------------------------------------------------- 3

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn criterion_invariance() -> Outcome {
    let cfg = ModelConfig {
        vocab_size: 40,
        d_w: 16,
        d_h: 16,
        heads: 4,
        d_add: 12,
        d_c: 10,
        d_g: 10,
        ..ModelConfig::default()
    };
    let model = NrmsIm::<f32>::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let n = 9;
    let mut tokens: Vec<usize> = (0..n).map(|_| rng.random_range(1..40)).collect();
    tokens[4] = PAD;
    let cues: Tensor<f32> = random_matrix(&mut rng, n + 10, cfg.d_c);
    let input = NewsInput { tokens, cues, global: random_matrix(&mut rng, 1, cfg.d_g), impression: true };
    let base = model.news_vector(&input).unwrap();
    let mut worst_news: f64 = 0.0;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut rows: Vec<Vec<f32>> = perm.iter().map(|&i| input.cues.row_slice(i).to_vec()).collect();
        rows.extend((n..n + 10).map(|i| input.cues.row_slice(i).to_vec()));
        let permuted = NewsInput {
            tokens: perm.iter().map(|&i| input.tokens[i]).collect(),
            cues: Tensor::from_rows(&rows).unwrap(),
            ..input.clone()
        };
        worst_news = worst_news.max(max_abs_diff(&base, &model.news_vector(&permuted).unwrap()));
    }

    let history: Vec<Tensor<f32>> = (0..10).map(|_| random_matrix(&mut rng, 1, cfg.d_h)).collect();
    let refs: Vec<&Tensor<f32>> = history.iter().collect();
    let u = model.user_vector(&refs).unwrap();
    let mut worst_user: f64 = 0.0;
    for _ in 0..20 {
        let mut shuffled = refs.clone();
        shuffled.shuffle(&mut rng);
        worst_user = worst_user.max(max_abs_diff(&u, &model.user_vector(&shuffled).unwrap()));
    }

    let ablated_cfg = ModelConfig { l_im: false, g_im: false, ..cfg };
    let ablated = NrmsIm::<f32>::new(ablated_cfg.clone(), 3).unwrap();
    let mut names: Vec<String> = ablated.params.names().map(str::to_string).collect();
    names.sort();
    let same_names = names == nrms_param_names(&ablated_cfg);

    ensure(
        worst_news <= 1e-5 && worst_user <= 1e-5 && same_names,
        format!(
            "token+cue perms max |de*| {worst_news:.2e}, history perms max |du| {worst_user:.2e}, ablated names match: {same_names} ({})",
            names.len()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn graph_loss(rows: &[Vec<f64>]) -> f64 {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_rows(rows).unwrap());
    let l = grouped_softmax_loss(&mut g, x).unwrap();
    g.value(l).data()[0]
}

fn criterion_loss() -> Outcome {
    let ln5 = 5f64.ln();
    let uniform_scalar = (ce_loss(0.0, &[0.0; 4]) - ln5).abs();
    let uniform_graph = (graph_loss(&[vec![0.0; 5], vec![2.5; 5], vec![-1.0; 5]]) - ln5).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_shift: f64 = 0.0;
    for _ in 0..200 {
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-6.0..6.0)).collect()).collect();
        let base_graph = graph_loss(&rows);
        let base_scalar = ce_loss(rows[0][0], &rows[0][1..]);
        for c in [-7.3, 0.4, 3.1, 100.0] {
            let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
            worst_shift = worst_shift
                .max((graph_loss(&shifted) - base_graph).abs())
                .max((ce_loss(shifted[0][0], &shifted[0][1..]) - base_scalar).abs());
        }
    }
    ensure(
        uniform_scalar <= 1e-6 && uniform_graph <= 1e-6 && worst_shift <= 1e-6,
        format!("|L - ln 5| {:.1e} / {:.1e}, max shift change {worst_shift:.1e}", uniform_scalar, uniform_graph),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut none_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let tie_values = [0.1, 0.5, 0.9];
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.4) { tie_values[rng.random_range(0..3)] } else { rng.random_range(0.0..1.0) })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        match (auc(&scores, &labels), brute_auc(&scores, &labels)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => none_mismatch += 1,
        }
        match (mrr(&scores, &labels), brute_mrr(&scores, &labels)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => none_mismatch += 1,
        }
        for k in [5, 10] {
            worst = worst.max((ndcg_at_k(&scores, &labels, k) - brute_ndcg(&scores, &labels, k)).abs());
        }
    }
    let auc_ties = auc(&[0.3, 0.3, 0.3], &[1, 0, 0]).unwrap();
    let ndcg_half = ndcg_at_k(&[0.1, 0.9, 0.3], &[1, 0, 0], 5);
    let mrr_mix = mrr(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 0, 1]).unwrap();
    let examples_ok = (auc_ties - 0.5).abs() <= 1e-9 && (ndcg_half - 0.5).abs() <= 1e-9 && (mrr_mix - 0.625).abs() <= 1e-9;
    ensure(
        worst <= 1e-9 && none_mismatch == 0 && examples_ok,
        format!(
            "1000 impressions, max |diff| {worst:.1e}, undefined mismatches {none_mismatch}; examples AUC {auc_ties}, NDCG@5 {ndcg_half}, MRR {mrr_mix}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_overfit() -> Outcome {
    let start = Instant::now();
    let run = desk_run(Signal::Mixed, &desk_config(1, 0, false));
    let secs = start.elapsed().as_secs_f64();
    let first = run.outcome.log.first().unwrap();
    let last = run.outcome.log.last().unwrap();
    ensure(
        last.loss <= 0.5 * first.loss && last.auc_train >= 0.95 && secs < 600.0,
        format!(
            "loss {:.4} -> {:.4} (ratio {:.3}), train AUC {:.4}",
            first.loss,
            last.loss,
            last.loss / first.loss,
            last.auc_train
        ),
    )
}

// ---------------------------------------------------------------- 7

fn dev_auc(run: &DeskRun) -> f64 {
    run.report.slice("all").and_then(|s| s.auc).unwrap_or(f64::NAN)
}

fn criterion_visual() -> Outcome {
    let full = dev_auc(&desk_run(Signal::Visual, &desk_config(1, 0, false)));
    let ablated = dev_auc(&desk_run(Signal::Visual, &desk_config(1, 0, true)));
    ensure(full >= 0.90 && ablated <= 0.60, format!("dev AUC full {full:.4}, ablated {ablated:.4}"))
}

// ---------------------------------------------------------------- 8

fn criterion_mask_trend() -> Outcome {
    let levels = [0, 25, 50, 75, 100];
    let aucs: Vec<f64> = levels.iter().map(|&m| dev_auc(&desk_run(Signal::Visual, &desk_config(1, m, false)))).collect();
    let rises: Vec<f64> = aucs.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    let ok = aucs.iter().all(|a| a.is_finite()) && (rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.01));
    let listed: Vec<String> = levels.iter().zip(&aucs).map(|(m, a)| format!("{m}%: {a:.4}")).collect();
    ensure(ok, format!("dev AUC {}; inversions {:?}", listed.join(", "), rises))
}

// ---------------------------------------------------------------- 9

fn criterion_cards() -> Outcome {
    let corpus = gen_synthetic(&SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write(dir.path()).unwrap();
    let images = dir.path().join("images");
    let layout = LayoutConfig::default();
    let fx = FeatureExtractor::projection(1, 8, 8);

    let mut news = corpus.news.clone();
    let mut edge = news[0].clone();
    edge.news_id = "Nempty".into();
    edge.title = "   ".into();
    news.push(edge.clone());
    edge.news_id = "Nlong".into();
    edge.title = "an extraordinarily verbose headline ".repeat(8);
    edge.category = "a-category-name-far-too-long-to-fit-on-the-card".into();
    news.push(edge.clone());
    edge.news_id = "Nword".into();
    edge.title = "x".repeat(80);
    news.push(edge);

    let mut problems = Vec::new();
    for n in &news {
        let a = render_with_cover_dir(n, Some(&images), &layout).unwrap();
        let b = render_with_cover_dir(n, Some(&images), &layout).unwrap();
        let (mut pa, mut pb) = (Vec::new(), Vec::new());
        a.pixels.write_png(&mut pa).unwrap();
        b.pixels.write_png(&mut pb).unwrap();
        if a != b || pa != pb {
            problems.push(format!("{}: nondeterministic", n.news_id));
        }
        if (a.pixels.width(), a.pixels.height()) != (615, 195) {
            problems.push(format!("{}: {}x{}", n.news_id, a.pixels.width(), a.pixels.height()));
        }
        let regions = split_regions(&a);
        let (x0, y0, x1, y1) = a.image_box.pixel_span();
        let mut cover = vec![0u8; (x1 - x0) * (y1 - y0)];
        let mut outside = false;
        for r in &regions.image {
            let (rx0, ry0, rx1, ry1) = r.bbox.pixel_span();
            if rx0 < x0 || ry0 < y0 || rx1 > x1 || ry1 > y1 {
                outside = true;
                continue;
            }
            for y in ry0..ry1 {
                for x in rx0..rx1 {
                    cover[(y - y0) * (x1 - x0) + (x - x0)] += 1;
                }
            }
        }
        if regions.image.len() != 9 || outside || cover.iter().any(|&c| c != 1) {
            problems.push(format!("{}: image regions do not tile the box", n.news_id));
        }
        let cues = fx.extract_cues(&regions).unwrap();
        if cues.len() != a.title_layout.word_count() + 10 {
            problems.push(format!("{}: |O| = {} for {} words", n.news_id, cues.len(), a.title_layout.word_count()));
        }
    }
    ensure(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} cards: deterministic, 615x195, 9-region tiling, |O| = words + 10", news.len())
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 10

fn criterion_reproducible() -> Outcome {
    let cfg = desk_config(1, 0, false);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = file_chain(d1.path(), Signal::Mixed, &cfg);
    let b = file_chain(d2.path(), Signal::Mixed, &cfg);
    let same = (a.report_json == b.report_json, a.log_csv == b.log_csv, a.checkpoint == b.checkpoint);
    ensure(
        same == (true, true, true),
        format!(
            "report identical: {}, training log identical: {}, checkpoint identical: {} ({} report bytes)",
            same.0,
            same.1,
            same.2,
            a.report_json.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient check", criterion_gradcheck),
        (2, "attention normalization", criterion_normalization),
        (3, "structural invariances", criterion_invariance),
        (4, "loss sanity", criterion_loss),
        (5, "metric oracles", criterion_metrics),
        (6, "overfit sanity", criterion_overfit),
        (7, "visual-signal separation", criterion_visual),
        (8, "masking trend", criterion_mask_trend),
        (9, "renderer and decomposer", criterion_cards),
        (10, "end-to-end reproducibility", criterion_reproducible),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = fmt_duration(start.elapsed());
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{took}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{took}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
