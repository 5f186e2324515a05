use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imrec::data::{
    gen_synthetic, parse_behaviors_tsv, parse_news_tsv, BehaviorRecord, NewsRecord, ParseReport, SynthConfig, Vocab,
};
use imrec::dataset::{
    extract_features, extract_features_from_cards, has_cover, load_model, save_model, CheckpointMeta, ExtractorSpec,
    NewsTable,
};
use imrec::decompose::{split_regions, FeatureExtractor, FeatureFile};
use imrec::eval::{evaluate, Slice};
use imrec::model::{NewsInput, NrmsIm};
use imrec::render::{render_with_cover_dir, write_pgm, LayoutConfig};
use imrec::train::{train, TrainConfig};
use imrec::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "imrec", version, about = "Impression-aware news recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render impression cards (PNG + layout JSON) for every news item.
    Render(RenderArgs),
    /// Decompose cards and write cue and global features.
    Features(FeaturesArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score impressions and report grouped metrics.
    Eval(EvalArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Dump memory-attention weights of one news item.
    Attn(AttnArgs),
}

#[derive(Args, Debug)]
struct Corpus {
    /// MIND-layout directory holding train/, dev/ and images/.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    news: Option<PathBuf>,
    #[arg(long)]
    behaviors: Option<PathBuf>,
    /// Directory of `<news_id>.png` / `.ppm` covers.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Precomputed feature file.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    images: Option<PathBuf>,
    /// Read pre-rendered cards instead of rendering.
    #[arg(long)]
    cards: Option<PathBuf>,
    /// Training config; only d_c and d_g are read.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: Corpus,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "mask-pct")]
    mask_pct: Option<u32>,
    /// Comma set of impression paths to switch off: l_im, g_im.
    #[arg(long)]
    ablate: Option<String>,
    /// Checkpoint path; metadata and the epoch log are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    corpus: Corpus,
    #[arg(long)]
    ckpt: PathBuf,
    /// Comma list such as `seen,unseen,seen+image`; `all` is always reported.
    #[arg(long)]
    slices: Option<String>,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// key=value generator options (n_users, n_news, signal, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttnArgs {
    #[command(flatten)]
    corpus: Corpus,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "news-id")]
    news_id: String,
    /// Output directory for `<id>_attn.json` and `<id>_attn.pgm`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Render(a) => render(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Attn(a) => attn(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn warn_malformed<T>(what: &Path, report: &ParseReport<T>) {
    if !report.malformed.is_empty() {
        eprintln!("warning: {} malformed line(s) in {}", report.malformed.len(), what.display());
    }
}

fn load_news(path: &Path) -> Result<Vec<NewsRecord>> {
    let report = parse_news_tsv(path)?;
    warn_malformed(path, &report);
    Ok(report.records)
}

fn load_behaviors(path: &Path) -> Result<Vec<BehaviorRecord>> {
    let report = parse_behaviors_tsv(path)?;
    warn_malformed(path, &report);
    Ok(report.records)
}

struct Paths {
    news: PathBuf,
    behaviors: Option<PathBuf>,
    images: Option<PathBuf>,
}

impl Corpus {
    /// Explicit flags win over `--data/<split>/...`.
    fn paths(&self, split: &str) -> Result<Paths> {
        let from_data = |file: &str| self.data.as_ref().map(|d| d.join(split).join(file));
        let news = self
            .news
            .clone()
            .or_else(|| from_data("news.tsv"))
            .ok_or_else(|| Error::Config("--news or --data is required".into()))?;
        let behaviors = self.behaviors.clone().or_else(|| from_data("behaviors.tsv"));
        let images = self
            .images
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join("images")).filter(|p| p.is_dir()));
        Ok(Paths { news, behaviors, images })
    }
}

fn require_behaviors(p: &Paths) -> Result<&Path> {
    p.behaviors
        .as_deref()
        .ok_or_else(|| Error::Config("--behaviors or --data is required".into()))
}

fn render(a: RenderArgs) -> Result<()> {
    let news = load_news(&a.news)?;
    create_dir(&a.out)?;
    let cfg = LayoutConfig::default();
    for n in &news {
        let card = render_with_cover_dir(n, a.images.as_deref(), &cfg)?;
        if let Some(w) = &card.cover_warning {
            eprintln!("warning: {}: {w}", n.news_id);
        }
        card.save(&a.out)?;
    }
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let news = load_news(&a.news)?;
    let cfg = match &a.config {
        Some(p) => TrainConfig::parse(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    let fx = FeatureExtractor::projection(a.seed, cfg.d_c, cfg.d_g);
    let file = match &a.cards {
        Some(dir) => extract_features_from_cards(&news, dir, &fx)?,
        None => extract_features(&news, a.images.as_deref(), &LayoutConfig::default(), &fx)?,
    };
    file.save(&a.out)
}

fn table_for(
    news: &[NewsRecord],
    paths: &Paths,
    features: Option<&Path>,
    spec: &ExtractorSpec,
    vocab: &Vocab,
    max_title: usize,
) -> Result<NewsTable> {
    let file = match (features, spec.projection()) {
        (Some(p), _) => FeatureFile::load(p)?,
        (None, Some(fx)) => extract_features(news, paths.images.as_deref(), &LayoutConfig::default(), &fx)?,
        (None, None) => return Err(Error::Config("this checkpoint was trained on precomputed features; pass --features".into())),
    };
    let images = paths.images.as_deref();
    NewsTable::build(news, vocab, &file, |n| has_cover(n, images), max_title)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mask_pct {
        cfg.mask_pct = m;
    }
    for part in a.ablate.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        match part {
            "l_im" => cfg.l_im = false,
            "g_im" => cfg.g_im = false,
            other => return Err(Error::Config(format!("--ablate accepts l_im and g_im, got {other:?}"))),
        }
    }
    cfg.validate()?;
    let paths = a.corpus.paths("train")?;
    let news = load_news(&paths.news)?;
    let behaviors = load_behaviors(require_behaviors(&paths)?)?;
    let vocab = Vocab::build(&news, 1);
    let spec = match &a.corpus.features {
        Some(_) => ExtractorSpec::Precomputed { d_c: cfg.d_c, d_g: cfg.d_g },
        None => ExtractorSpec::Projection { seed: cfg.seed, d_c: cfg.d_c, d_g: cfg.d_g },
    };
    let table = table_for(&news, &paths, a.corpus.features.as_deref(), &spec, &vocab, cfg.max_title)?;
    let mut model = NrmsIm::<f32>::new(cfg.model_config(vocab.len()), cfg.seed)?;
    let outcome = train(&cfg, &mut model, &behaviors, &table, |e| {
        eprintln!("epoch {} loss {:.6} auc_train {:.4}", e.epoch, e.loss, e.auc_train);
    })?;
    if outcome.skipped_groups > 0 {
        eprintln!("warning: {} impression(s) without negatives skipped", outcome.skipped_groups);
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let meta = CheckpointMeta {
        model: model.config.clone(),
        vocab,
        extractor: spec,
        train_users: behaviors.iter().map(|b| b.user_id.clone()).collect(),
    };
    save_model(&a.out, &model, &meta)?;
    let mut log = a.out.as_os_str().to_owned();
    log.push(".log.csv");
    let log = PathBuf::from(log);
    std::fs::write(&log, outcome.log_csv()).map_err(|e| Error::io(&log, e))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let slices = match &a.slices {
        Some(s) => Slice::parse_list(s)?,
        None => Slice::defaults(),
    };
    let (model, meta) = load_model(&a.ckpt)?;
    let paths = a.corpus.paths("dev")?;
    let news = load_news(&paths.news)?;
    let behaviors = load_behaviors(require_behaviors(&paths)?)?;
    let table = table_for(&news, &paths, a.corpus.features.as_deref(), &meta.extractor, &meta.vocab, meta.model.max_title)?;
    let report = evaluate(&model, &table, &behaviors, &meta.train_users, &slices)?;
    if report.skipped_impressions > 0 {
        eprintln!("warning: {} impression(s) with unknown news skipped", report.skipped_impressions);
    }
    match &a.out {
        Some(p) => {
            std::fs::write(p, report.to_json()).map_err(|e| Error::io(p, e))?;
            print!("{}", report.to_table());
        }
        None => print!("{}", report.to_json()),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::parse(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    gen_synthetic(&cfg)?.write(&a.out)
}

fn attn(a: AttnArgs) -> Result<()> {
    let (model, meta) = load_model(&a.ckpt)?;
    let paths = a.corpus.paths("train")?;
    let news = load_news(&paths.news)?;
    let record = news
        .iter()
        .find(|n| n.news_id == a.news_id)
        .ok_or_else(|| Error::MissingNews(a.news_id.clone()))?;
    let card = render_with_cover_dir(record, paths.images.as_deref(), &LayoutConfig::default())?;
    let fx = match (&a.corpus.features, meta.extractor.projection()) {
        (Some(p), _) => FeatureExtractor::Precomputed(FeatureFile::load(p)?),
        (None, Some(fx)) => fx,
        (None, None) => return Err(Error::Config("this checkpoint was trained on precomputed features; pass --features".into())),
    };
    let cues = fx.extract_cues(&split_regions(&card))?;
    let global = fx.extract_global(&card)?;
    let mut tokens = meta.vocab.encode(&record.title);
    tokens.truncate(meta.model.max_title);
    let input = NewsInput {
        tokens: tokens.clone(),
        cues: cues.vectors,
        global: global.0,
        impression: true,
    };
    let (_, rec) = model.attention(&input)?;
    if rec.alpha_v.is_empty() {
        return Err(Error::Contract("the checkpoint has no memory attention (l_im is off)".into()));
    }
    let words: Vec<&str> = tokens.iter().map(|&t| meta.vocab.token(t).unwrap_or("<unk>")).collect();
    let json = serde_json::json!({
        "news_id": a.news_id,
        "tokens": words,
        "cue_tags": cues.tags.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "alpha_v": rec.alpha_v,
        "alpha_a": rec.alpha_a,
    });
    create_dir(&a.out)?;
    let json_path = a.out.join(format!("{}_attn.json", a.news_id));
    let text = serde_json::to_string_pretty(&json).expect("json value serializes") + "\n";
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    let (rows, cols) = (rec.alpha_v.len(), rec.alpha_v[0].len());
    let mut pixels = Vec::with_capacity(rows * cols);
    for row in &rec.alpha_v {
        let max = row.iter().copied().fold(0.0, f64::max);
        pixels.extend(row.iter().map(|&v| if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 }));
    }
    let pgm_path = a.out.join(format!("{}_attn.pgm", a.news_id));
    let file = std::fs::File::create(&pgm_path).map_err(|e| Error::io(&pgm_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_pgm(cols, rows, &pixels, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&pgm_path, e))
}

