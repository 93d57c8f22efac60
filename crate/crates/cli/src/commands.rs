use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pixelcritic::image::{ErrorMap, Image};
use pixelcritic::metrics::{
    evaluate_splits, gaussian_stats, heatmap_overlay, pd_score, rank_and_split, read_features,
    read_scores, write_scores, ConvEncoder, FeatureExtractor, PdScore,
};
use pixelcritic::net::{build_model, Model};
use pixelcritic::synth::{
    derive_seed, load_labelled, load_sources, manifest_path, read_manifest, synthesize_collages,
    write_collage_set, write_toy_set,
};
use pixelcritic::train::{evaluate_detection, train, Preset};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExtractorKind, RunConfig};
use crate::{
    Cli, Command, HeatmapArgs, RankArgs, ScoreArgs, SplitsArgs, SynthArgs, Target, TrainArgs,
    UsageError,
};

const TOY_SEED: u64 = 1;
const COLLAGE_SEED: u64 = 2;
const INIT_SEED: u64 = 3;
const SHUFFLE_SEED: u64 = 4;
const ENCODER_SEED: u64 = 5;
const EXTRACTOR_SEED: u64 = 6;
const BASELINE_SEED: u64 = 7;

struct Ctx {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn seed(&self, component: u64) -> u64 {
        derive_seed(self.seed, component, 0)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        Ok(&self.out)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(UsageError("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let ctx = Ctx {
        config: RunConfig::load(cli.config.as_deref())?,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(a) => synth(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Score(a) => score(ctx, a),
        Command::Rank(a) => rank(ctx, a),
        Command::Splits(a) => splits(ctx, a),
        Command::Heatmap(a) => heatmap(ctx, a),
    }
}

fn synth(mut ctx: Ctx, args: SynthArgs) -> Result<()> {
    if let Some(count) = args.count {
        ctx.config.synth.count = count;
    }
    let cfg = &ctx.config.synth;
    let out = ctx.out_dir()?;
    let (real, generated) = match (&args.real, &args.generated) {
        (Some(r), Some(g)) => (load_sources(r)?, load_sources(g)?),
        _ => write_toy_set(&cfg.toy, ctx.seed(TOY_SEED), out)?,
    };
    let samples = synthesize_collages(
        &real,
        &generated,
        cfg.count,
        &cfg.collage,
        ctx.seed(COLLAGE_SEED),
    )?;
    write_collage_set(&samples, out, "train.jsonl")?;
    ctx.config.echo(out)?;
    println!(
        "wrote {} collages from {} real and {} generated images to {}",
        samples.len(),
        real.len(),
        generated.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(mut ctx: Ctx, args: TrainArgs) -> Result<()> {
    if let Some(epochs) = args.epochs {
        ctx.config.train.epochs = epochs;
        ctx.config.eval.encoder_training.epochs = epochs;
    }
    match args.target {
        Target::Detector => train_detector(ctx, args),
        Target::Encoder => train_encoder(ctx, args),
    }
}

fn train_detector(mut ctx: Ctx, args: TrainArgs) -> Result<()> {
    if let Some(p) = args.preset {
        ctx.config.train.preset = Some(Preset::from(p));
    }
    ctx.config.train.seed = ctx.seed(SHUFFLE_SEED);
    ctx.config.loss = ctx.config.train.effective_loss(ctx.config.loss);
    ctx.config.arch.validate()?;
    ctx.config.train.validate()?;
    ctx.config.loss.validate()?;
    let samples = load_labelled(&args.manifest)?;
    let val = args.val.as_deref().map(load_labelled).transpose()?;
    let mut model = build_model(&ctx.config.arch, ctx.seed(INIT_SEED))?;
    let out = ctx.out_dir()?;
    ctx.config.echo(out)?;
    let history = train(
        &mut model,
        &samples,
        &ctx.config.train,
        &ctx.config.loss,
        Some(out),
    )?;
    if let Some(last) = history.last() {
        println!("epoch {} mean loss {:.6}", last.epoch, last.mean_loss);
    }
    if let Some(val) = val {
        let report = evaluate_detection(&model, &val)?;
        fs::write(
            out.join("eval.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        println!("held-out pixel AUC {:.4}", report.auc);
    }
    Ok(())
}

fn train_encoder(mut ctx: Ctx, args: TrainArgs) -> Result<()> {
    ctx.config.eval.encoder_training.seed = ctx.seed(ENCODER_SEED);
    let records = read_manifest(&args.manifest)?;
    let mut names: Vec<String> = Vec::new();
    let mut images = Vec::with_capacity(records.len());
    let mut classes = Vec::with_capacity(records.len());
    for r in &records {
        let Some(class) = &r.class else {
            bail!(pixelcritic::Error::Data(format!(
                "{} has no class; the encoder is a class classifier",
                r.image
            )));
        };
        images.push(Image::load_png(&manifest_path(&args.manifest, &r.image))?);
        if !names.contains(class) {
            names.push(class.clone());
        }
        classes.push(class.clone());
    }
    names.sort();
    let classes: Vec<usize> = classes
        .iter()
        .map(|c| names.binary_search(c).unwrap())
        .collect();
    let eval = &ctx.config.eval;
    let (encoder, history) = ConvEncoder::train_classifier(
        &images,
        &classes,
        names,
        &eval.encoder_widths,
        &eval.encoder_training,
    )?;
    let out = ctx.out_dir()?;
    encoder.save(&out.join("encoder.pxc"))?;
    fs::write(
        out.join("encoder_history.json"),
        serde_json::to_string_pretty(&history)? + "\n",
    )?;
    ctx.config.echo(out)?;
    if let Some(last) = history.last() {
        println!("encoder trained, final epoch loss {last:.6}");
    }
    Ok(())
}

struct ScoreInput {
    id: String,
    class: Option<String>,
    path: PathBuf,
}

fn score_inputs(inputs: &[PathBuf]) -> Result<Vec<ScoreInput>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.extension().is_some_and(|e| e == "jsonl") {
            for r in read_manifest(input)? {
                out.push(ScoreInput {
                    path: manifest_path(input, &r.image),
                    id: r.image,
                    class: r.class,
                });
            }
        } else {
            out.push(ScoreInput {
                id: input.display().to_string(),
                class: None,
                path: input.clone(),
            });
        }
    }
    Ok(out)
}

fn map_file_name(id: &str) -> String {
    let stem = id.strip_suffix(".png").unwrap_or(id);
    format!("{}.png", stem.replace(['/', '\\'], "_"))
}

fn score(ctx: Ctx, args: ScoreArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let inputs = score_inputs(&args.inputs)?;
    let results: Vec<Result<(PdScore, ErrorMap)>> = inputs
        .par_iter()
        .map(|inp| {
            let image = Image::load_png(&inp.path)?;
            let map = model.forward(&image)?;
            Ok((
                PdScore::new(&inp.id, inp.class.clone(), pd_score(&map))?,
                map,
            ))
        })
        .collect();
    let out = ctx.out_dir()?;
    let maps_dir = out.join("maps");
    if args.save_maps {
        fs::create_dir_all(&maps_dir)?;
    }
    let mut scores = Vec::new();
    let mut failed = 0;
    for (inp, r) in inputs.iter().zip(results) {
        match r {
            Ok((s, map)) => {
                if args.save_maps {
                    map.save_png(&maps_dir.join(map_file_name(&inp.id)))?;
                }
                scores.push(s);
            }
            Err(e) => {
                eprintln!("{}: {e:#}", inp.path.display());
                failed += 1;
            }
        }
    }
    write_scores(&out.join("scores.csv"), &scores)?;
    println!("scored {} images", scores.len());
    if failed > 0 {
        bail!(pixelcritic::Error::Data(format!(
            "{failed} of {} images failed",
            inputs.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct RankedSplit<'a> {
    index: usize,
    mean_pd: f64,
    members: Vec<&'a str>,
}

fn rank(ctx: Ctx, args: RankArgs) -> Result<()> {
    let k = args.k.unwrap_or(ctx.config.eval.k);
    let per_class = args.per_class || ctx.config.eval.per_class;
    let scores = read_scores(&args.scores)?;
    let splits = rank_and_split(&scores, k, per_class)?;
    let ranked: Vec<RankedSplit> = splits
        .iter()
        .map(|s| RankedSplit {
            index: s.index,
            mean_pd: s.mean_pd(),
            members: s.members.iter().map(|m| m.id.as_str()).collect(),
        })
        .collect();
    let out = ctx.out_dir()?;
    fs::write(
        out.join("ranking.json"),
        serde_json::to_string_pretty(&ranked)? + "\n",
    )?;
    println!("{:>5}  {:>8}  {:>8}", "split", "size", "mean PD");
    for s in &ranked {
        println!("{:>5}  {:>8}  {:>8.4}", s.index, s.members.len(), s.mean_pd);
    }
    Ok(())
}

fn extractor(ctx: &Ctx, args: &SplitsArgs) -> Result<ConvEncoder> {
    match args.extractor.unwrap_or(ctx.config.eval.extractor) {
        ExtractorKind::RandomConv => Ok(ConvEncoder::random_default(ctx.seed(EXTRACTOR_SEED))),
        ExtractorKind::TrainedEncoder => {
            let path = args
                .encoder
                .as_ref()
                .or(ctx.config.eval.encoder.as_ref())
                .ok_or_else(|| {
                    UsageError("trained_encoder needs --encoder or eval.encoder".into())
                })?;
            Ok(ConvEncoder::load(path)?)
        }
    }
}

fn splits(ctx: Ctx, args: SplitsArgs) -> Result<()> {
    let k = args.k.unwrap_or(ctx.config.eval.k);
    let per_class = args.per_class || ctx.config.eval.per_class;
    let scores = read_scores(&args.scores)?;
    let splits = rank_and_split(&scores, k, per_class)?;
    let (features, reference) = match (&args.features, &args.reference_features) {
        (Some(f), Some(r)) => {
            let rows = read_features(f)?;
            if rows.len() != scores.len() {
                bail!(pixelcritic::Error::Data(format!(
                    "{} has {} rows for {} scores",
                    f.display(),
                    rows.len(),
                    scores.len()
                )));
            }
            let features: BTreeMap<String, Vec<f64>> =
                scores.iter().map(|s| s.id.clone()).zip(rows).collect();
            (features, gaussian_stats(&read_features(r)?)?)
        }
        _ => {
            let extractor = extractor(&ctx, &args)?;
            let mut paths: BTreeMap<String, PathBuf> = BTreeMap::new();
            for m in &args.images {
                for r in read_manifest(m)? {
                    paths.insert(r.image.clone(), manifest_path(m, &r.image));
                }
            }
            let images = scores
                .iter()
                .map(|s| {
                    Image::load_png(paths.get(&s.id).map_or(Path::new(&s.id), |p| p.as_path()))
                })
                .collect::<pixelcritic::Result<Vec<_>>>()?;
            let feats = extractor.extract_all(&images)?;
            let features = scores.iter().map(|s| s.id.clone()).zip(feats).collect();
            let real_manifest = args.real.as_ref().expect("clap requires --real here");
            let real: Vec<Image> = load_sources(real_manifest)?
                .into_iter()
                .map(|s| s.image)
                .collect();
            (features, gaussian_stats(&extractor.extract_all(&real)?)?)
        }
    };
    let report = evaluate_splits(&splits, &features, &reference, ctx.seed(BASELINE_SEED))?;
    let out = ctx.out_dir()?;
    fs::write(out.join("splits.json"), report.to_json())?;
    print!("{}", report.table());
    Ok(())
}

fn heatmap(ctx: Ctx, args: HeatmapArgs) -> Result<()> {
    let alpha = args.alpha.unwrap_or(ctx.config.eval.alpha);
    if !(0.0..=1.0).contains(&alpha) {
        bail!(UsageError(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let image = Image::load_png(&args.image)?;
    let errors = ErrorMap::load_png(&args.error_map)?;
    let overlay = heatmap_overlay(&image, &errors, alpha)?;
    let path = match args.output {
        Some(p) => p,
        None => ctx.out_dir()?.join("heatmap.png"),
    };
    overlay.save_png(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
