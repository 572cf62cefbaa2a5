//! Subcommand implementations. Each writes its artifacts under the output
//! directory and prints a short summary on stdout; progress goes to stderr.

use std::fs;
use std::path::{Component, Path, PathBuf};

use hwdm_core::deploy::{compare_quantized, model_checkpoint, prune_magnitude, quantize_model};
use hwdm_core::gan::{balanced_targets, generation_plan, synthesis_seed, train_gan, GanEpoch};
use hwdm_core::imaging::{encode_pnm, resize_bilinear, to_signed_tensor, ImageU8};
use hwdm_core::metrics::IouCounts;
use hwdm_core::reports::{confusion_csv, emit_plot_data, report_csv, write_atomic, CONFUSION_FILE, REPORT_FILE};
use hwdm_core::ssl::{pretrain, ENCODER_PREFIXES};
use hwdm_core::train::{predict_all, train};
use hwdm_core::{
    Checkpoint, CheckpointKind, ConfusionMatrix, Gan, HybridModel, MetricsReport, PlantClass, Prediction, QuantizedModel, Sample,
    NUM_CLASSES,
};

use crate::config::RunConfig;
use crate::data::{gen_synthetic, ingest, load_manifest, raw_images, Loaded, IMAGE_DIR};
use crate::error::{CliError, CliResult};
use crate::manifest::{self, Manifest, Record};
use crate::synth::imbalanced_counts;

pub const MODEL_FILE: &str = "model.hwdm";
pub const BEST_FILE: &str = "best.hwdm";
pub const QUANTIZED_FILE: &str = "model.q.hwdm";
pub const PRUNED_FILE: &str = "model.pruned.hwdm";
pub const GAN_FILE: &str = "gan.hwdm";
pub const PRETRAIN_FILE: &str = "pretrain.hwdm";
pub const GAN_HISTORY_FILE: &str = "gan_history.csv";
pub const SSL_HISTORY_FILE: &str = "ssl_history.csv";
pub const FOLDS_FILE: &str = "folds.csv";
pub const AGREEMENT_FILE: &str = "quantize_report.csv";

/// Settings shared by every subcommand.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn warn_all(loaded: &Loaded) {
    for w in &loaded.parsed.warnings {
        eprintln!("warning: {w}");
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn model_of(ckpt: &Checkpoint, path: &Path) -> CliResult<HybridModel> {
    ckpt.model().map_err(|e| CliError::from(e).context(path.display()))
}

pub fn gen_data(ctx: &Context, per_class: Option<usize>, imbalanced: Option<usize>, size: Option<usize>) -> CliResult<()> {
    let data = &ctx.cfg.data;
    let size = size.unwrap_or(data.size);
    let total = imbalanced.unwrap_or(data.imbalanced_total);
    let counts = if total > 0 { imbalanced_counts(total) } else { [per_class.unwrap_or(data.per_class); NUM_CLASSES] };
    if size == 0 {
        return Err(CliError::Usage("image size must be positive".into()));
    }
    let m = gen_synthetic(ctx.out_dir()?, counts, size, ctx.cfg.seed)?;
    println!("wrote {} synthetic samples ({size}x{size}) to {}", m.records.len(), ctx.out.display());
    for class in PlantClass::ALL {
        println!("  {class}: {}", counts[class.index()]);
    }
    Ok(())
}

/// Writes the enhanced images and resized masks with a matching manifest.
pub fn preprocess(ctx: &Context, manifest_path: &Path) -> CliResult<()> {
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let pre = &ctx.cfg.preprocess;
    let out = ctx.out_dir()?;
    let samples = ingest(&loaded, pre)?;
    let mut records = Vec::new();
    for (sample, (line, r)) in samples.iter().zip(loaded.records()) {
        let path = relative_inside(&r.path).map_err(|e| e.context(format!("{}:{line}", loaded.path.display())))?;
        let raw = hwdm_core::imaging::read_pnm(manifest::resolve(&loaded.base, &r.path))?.to_rgb();
        let enhanced = pre.enhance(&raw)?;
        write_file(&out.join(&path), &encode_pnm(&enhanced))?;
        let mask = match (&r.mask, &sample.mask) {
            (Some(m), Some(pixels)) => {
                let m = relative_inside(m)?;
                let (h, w) = pre.target_size;
                write_file(&out.join(&m), &encode_pnm(&ImageU8::new(h, w, 1, pixels.clone())?))?;
                Some(m)
            }
            _ => None,
        };
        records.push(Record { path, mask, ..r.clone() });
    }
    let m = Manifest { records, procedural: loaded.parsed.manifest.procedural };
    write_atomic(&out.join(manifest::FILE_NAME), m.to_text().as_bytes())?;
    println!("preprocessed {} images into {}", m.records.len(), out.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(write_atomic(path, bytes)?)
}

/// Rejects absolute paths and `..` so outputs stay inside the output directory.
fn relative_inside(path: &str) -> CliResult<String> {
    if Path::new(path).components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) {
        Ok(path.to_string())
    } else {
        Err(CliError::Data(format!("path {path} must be relative and stay inside the dataset directory")))
    }
}

pub fn gan_train(ctx: &Context, manifest_path: &Path) -> CliResult<()> {
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let cfg = &ctx.cfg.gan;
    let data = raw_images(&loaded)?
        .into_iter()
        .map(|(img, label)| {
            let img = if (img.height(), img.width()) == cfg.image_size { img } else { resize_bilinear(&img, cfg.image_size)? };
            Ok((to_signed_tensor(&img), label.index()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (gan, history) = train_gan(&data, cfg, ctx.cfg.seed, |e: &GanEpoch| {
        eprintln!("gan epoch {:3}  d_loss {:.6}  g_loss {:.6}", e.epoch, e.d_loss, e.g_loss);
    })?;
    let out = ctx.out_dir()?;
    Checkpoint::from_params(CheckpointKind::Generator, "", &gan.params).save(&out.join(GAN_FILE))?;
    let mut csv = String::from("epoch,d_loss,g_loss\n");
    for e in &history {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.d_loss, e.g_loss));
    }
    write_atomic(&out.join(GAN_HISTORY_FILE), csv.as_bytes())?;
    if let Some(last) = history.last() {
        println!("trained GAN for {} epochs: d_loss {:.6}, g_loss {:.6}", history.len(), last.d_loss, last.g_loss);
    }
    Ok(())
}

/// Copies the dataset into the output directory and adds generated images
/// until every class matches the largest one.
pub fn augment(ctx: &Context, manifest_path: &Path, gan_path: &Path) -> CliResult<()> {
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let ckpt = load_checkpoint(gan_path)?;
    if ckpt.kind != CheckpointKind::Generator {
        return Err(CliError::Data(format!("{}: expected a generator checkpoint, got {:?}", gan_path.display(), ckpt.kind)));
    }
    let gan = Gan::from_params(ckpt.params()).map_err(|e| CliError::from(e).context(gan_path.display()))?;
    let original = &loaded.parsed.manifest;
    let Some((first_line, first)) = loaded.records().next() else {
        return Err(CliError::Data("cannot augment an empty manifest".into()));
    };
    let out = ctx.out_dir()?;
    let same_dir = fs::canonicalize(&loaded.base)? == fs::canonicalize(out)?;
    for (line, r) in loaded.records() {
        for file in std::iter::once(&r.path).chain(&r.mask) {
            let rel = relative_inside(file).map_err(|e| e.context(format!("{}:{line}", loaded.path.display())))?;
            if !same_dir {
                write_file(&out.join(&rel), &fs::read(manifest::resolve(&loaded.base, file))?)?;
            }
        }
    }
    let size = {
        let img = hwdm_core::imaging::read_pnm(manifest::resolve(&loaded.base, &first.path))
            .map_err(|e| CliError::from(e).context(format!("{}:{first_line}", loaded.path.display())))?;
        (img.height(), img.width())
    };
    let counts = original.class_counts();
    let mut next = [0usize; NUM_CLASSES];
    let mut records = original.records.clone();
    for class in generation_plan(&counts, &balanced_targets(&counts)) {
        let i = next[class.index()];
        next[class.index()] += 1;
        let img = gan.synthesize(class, synthesis_seed(ctx.cfg.seed, class, i))?;
        let img = if (img.height(), img.width()) == size { img } else { resize_bilinear(&img, size)? };
        let path = format!("{IMAGE_DIR}/gan_{class}_{i:05}.ppm");
        write_file(&out.join(&path), &encode_pnm(&img))?;
        records.push(Record { path, label: class, mask: None, growth: None, synthetic: true });
    }
    let m = Manifest { records, procedural: original.procedural };
    write_atomic(&out.join(manifest::FILE_NAME), m.to_text().as_bytes())?;
    let added = m.records.len() - original.records.len();
    println!("added {added} generated images; class counts now {:?}", m.class_counts());
    Ok(())
}

pub fn pretrain_cmd(ctx: &Context, manifest_path: &Path) -> CliResult<()> {
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let images: Vec<ImageU8> = raw_images(&loaded)?.into_iter().map(|(img, _)| img).collect();
    let cfg = &ctx.cfg;
    let outcome = pretrain(&images, &cfg.backbone, &cfg.preprocess, &cfg.ssl, cfg.seed, |epoch, loss| {
        eprintln!("ssl epoch {epoch:3}  loss {loss:.6}");
    })?;
    let out = ctx.out_dir()?;
    Checkpoint::from_params(CheckpointKind::PretrainOnly, cfg.backbone.to_text(), &outcome.params)
        .save(&out.join(PRETRAIN_FILE))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.history.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write_atomic(&out.join(SSL_HISTORY_FILE), csv.as_bytes())?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!("contrastive loss {first:.6} -> {last:.6} over {} epochs", outcome.history.len());
    }
    Ok(())
}

/// Fresh model for this run, with encoder weights from `pretrained` if given.
fn initial_model(cfg: &RunConfig, pretrained: Option<&Path>) -> CliResult<HybridModel> {
    let mut model = HybridModel::new(cfg.backbone.clone(), cfg.seed)?;
    if let Some(path) = pretrained {
        let ckpt = load_checkpoint(path)?;
        if ckpt.kind != CheckpointKind::PretrainOnly {
            return Err(CliError::Data(format!("{}: expected a pretraining checkpoint, got {:?}", path.display(), ckpt.kind)));
        }
        if ckpt.backbone()? != cfg.backbone {
            return Err(CliError::Usage(format!("{}: backbone differs from the configured one", path.display())));
        }
        let copied = model.params.overwrite_from(&ckpt.params(), &ENCODER_PREFIXES);
        eprintln!("loaded {copied} encoder tensors from {}", path.display());
    }
    Ok(model)
}

pub fn train_cmd(ctx: &Context, manifest_path: &Path, val: Option<&Path>, pretrained: Option<&Path>) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let samples = ingest(&loaded, &cfg.preprocess)?;
    let val_samples = match val {
        Some(p) => {
            let l = load_manifest(p)?;
            warn_all(&l);
            ingest(&l, &cfg.preprocess)?
        }
        None => Vec::new(),
    };
    let model = initial_model(cfg, pretrained)?;
    let outcome = train(model, &samples, &val_samples, &cfg.train, |r| {
        let val = r.val_acc.map(|a| format!("  val_acc {a:.4}")).unwrap_or_default();
        eprintln!("epoch {:3}  train_acc {:.4}  loss {:.6}{val}", r.epoch, r.train_acc, r.train_loss.l_total);
    })?;
    let out = ctx.out_dir()?;
    model_checkpoint(&outcome.model).save(&out.join(MODEL_FILE))?;
    let best = HybridModel { config: cfg.backbone.clone(), params: outcome.best_params.clone() };
    model_checkpoint(&best).save(&out.join(BEST_FILE))?;
    emit_plot_data(out, &outcome.history, None)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs: train_acc {:.4}, loss {:.6}; best epoch {}",
        last.epoch, last.train_acc, last.train_loss.l_total, outcome.best_epoch
    );
    Ok(())
}

fn iou_of(samples: &[Sample], predictions: &[Prediction]) -> CliResult<Option<IouCounts>> {
    let mut iou = IouCounts::new(NUM_CLASSES);
    let mut any = false;
    for (s, p) in samples.iter().zip(predictions) {
        if let Some(mask) = &s.mask {
            iou.record(&p.mask_labels(), mask)?;
            any = true;
        }
    }
    Ok(any.then_some(iou))
}

fn data_source(loaded: &Loaded) -> &'static str {
    if loaded.parsed.manifest.procedural {
        "procedural"
    } else {
        "external"
    }
}

/// `confusion.csv` and `report.csv`, the latter ending in a row that says
/// whether the samples came from the procedural generator.
fn emit_flagged(out: &Path, report: &MetricsReport, loaded: &Loaded) -> CliResult<()> {
    write_atomic(&out.join(CONFUSION_FILE), &confusion_csv(&report.confusion)?)?;
    let mut table = report_csv(report)?;
    table.extend_from_slice(format!("data,{},,,\n", data_source(loaded)).as_bytes());
    write_atomic(&out.join(REPORT_FILE), &table)?;
    if loaded.parsed.manifest.procedural {
        println!("data: procedurally generated stand-in set, not field imagery");
    }
    Ok(())
}

fn print_report(report: &MetricsReport) {
    println!("accuracy {:.4}", report.accuracy);
    println!("macro f1 {:.4}", report.macro_avg.f1);
    if let Some(miou) = report.mean_iou {
        println!("mean iou {miou:.4}");
    }
}

pub fn eval(ctx: &Context, manifest_path: &Path, model_path: &Path) -> CliResult<()> {
    let ckpt = load_checkpoint(model_path)?;
    let model = model_of(&ckpt, model_path)?;
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let samples = ingest(&loaded, &ctx.cfg.preprocess_for(&model.config))?;
    if samples.is_empty() {
        return Err(CliError::Data("nothing to evaluate: the manifest is empty".into()));
    }
    let predictions = predict_all(&model, &samples)?;
    let pairs: Vec<(usize, usize)> =
        samples.iter().zip(&predictions).map(|(s, p)| (s.label.index(), p.predicted_class())).collect();
    let report =
        MetricsReport::from_confusion(ConfusionMatrix::from_pairs(NUM_CLASSES, &pairs)?, iou_of(&samples, &predictions)?)?;
    emit_flagged(ctx.out_dir()?, &report, &loaded)?;
    print_report(&report);
    Ok(())
}

/// Stratified k-fold cross-validation: one fresh model per fold, pooled
/// confusion matrix and IoU counts over all held-out predictions.
pub fn cross_validate(ctx: &Context, manifest_path: &Path) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let loaded = load_manifest(manifest_path)?;
    warn_all(&loaded);
    let samples = ingest(&loaded, &cfg.preprocess)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let plan = hwdm_core::folds::stratified_folds(&labels, cfg.folds, cfg.seed)?;
    let mut confusion = ConfusionMatrix::new(NUM_CLASSES);
    let mut iou: Option<IouCounts> = None;
    let mut csv = String::from("fold,train,validation,accuracy\n");
    for fold in 0..cfg.folds {
        let pick = |idx: Vec<usize>| idx.into_iter().map(|i| samples[i].clone()).collect::<Vec<_>>();
        let (tr, va) = (pick(plan.training_indices(fold)), pick(plan.validation_indices(fold)));
        let model = HybridModel::new(cfg.backbone.clone(), cfg.seed)?;
        let outcome = train(model, &tr, &[], &cfg.train, |r| {
            eprintln!("fold {fold} epoch {:3}  train_acc {:.4}  loss {:.6}", r.epoch, r.train_acc, r.train_loss.l_total);
        })?;
        let predictions = predict_all(&outcome.model, &va)?;
        let mut correct = 0;
        for (s, p) in va.iter().zip(&predictions) {
            confusion.record(s.label.index(), p.predicted_class())?;
            correct += usize::from(s.label.index() == p.predicted_class());
        }
        if let Some(fold_iou) = iou_of(&va, &predictions)? {
            iou.get_or_insert_with(|| IouCounts::new(NUM_CLASSES)).merge(&fold_iou);
        }
        csv.push_str(&format!("{fold},{},{},{}\n", tr.len(), va.len(), correct as f64 / va.len() as f64));
    }
    let report = MetricsReport::from_confusion(confusion, iou)?;
    let out = ctx.out_dir()?;
    emit_flagged(out, &report, &loaded)?;
    write_atomic(&out.join(FOLDS_FILE), csv.as_bytes())?;
    print_report(&report);
    Ok(())
}

pub fn quantize(ctx: &Context, model_path: &Path, manifest_path: Option<&Path>) -> CliResult<()> {
    let ckpt = load_checkpoint(model_path)?;
    if ckpt.kind != CheckpointKind::Full {
        return Err(CliError::Data(format!("{}: expected a full model checkpoint, got {:?}", model_path.display(), ckpt.kind)));
    }
    let model = model_of(&ckpt, model_path)?;
    let q = quantize_model(&model)?;
    let out = ctx.out_dir()?;
    q.save(&out.join(QUANTIZED_FILE))?;
    println!("wrote {}", out.join(QUANTIZED_FILE).display());
    if let Some(path) = manifest_path {
        let loaded = load_manifest(path)?;
        warn_all(&loaded);
        let images: Vec<_> = ingest(&loaded, &ctx.cfg.preprocess_for(&model.config))?.into_iter().map(|s| s.image).collect();
        let report = compare_quantized(&model, &QuantizedModel::from_checkpoint(q)?, &images)?;
        let csv = format!(
            "samples,agreement,max_log_prob_drift,data\n{},{},{},{}\n",
            report.samples,
            report.agreement,
            report.max_log_prob_drift,
            data_source(&loaded)
        );
        write_atomic(&out.join(AGREEMENT_FILE), csv.as_bytes())?;
        println!("top-1 agreement {:.4} on {} images", report.agreement, report.samples);
        println!("max log-probability drift {:.6}", report.max_log_prob_drift);
    }
    Ok(())
}

pub fn prune(ctx: &Context, model_path: &Path, fraction: Option<f64>) -> CliResult<()> {
    let ckpt = load_checkpoint(model_path)?;
    if ckpt.kind != CheckpointKind::Full {
        return Err(CliError::Data(format!("{}: expected a full model checkpoint, got {:?}", model_path.display(), ckpt.kind)));
    }
    let fraction = fraction.unwrap_or(ctx.cfg.prune_fraction);
    if !(0.0..1.0).contains(&fraction) {
        return Err(CliError::Usage(format!("--fraction {fraction} must be in [0, 1)")));
    }
    let (params, masks) = prune_magnitude(&ckpt.params(), fraction)?;
    let out = ctx.out_dir()?;
    Checkpoint::from_params(CheckpointKind::Full, ckpt.metadata.clone(), &params).save(&out.join(PRUNED_FILE))?;
    let total: usize = masks.values().map(Vec::len).sum();
    let zeroed: usize = masks.values().map(|m| m.iter().filter(|&&k| !k).count()).sum();
    println!("zeroed {zeroed} of {total} weights; wrote {}", out.join(PRUNED_FILE).display());
    Ok(())
}

pub fn infer(ctx: &Context, model_path: &Path, image_path: &Path) -> CliResult<()> {
    let ckpt = load_checkpoint(model_path)?;
    let config = ckpt.backbone().map_err(|e| CliError::from(e).context(model_path.display()))?;
    let img = hwdm_core::imaging::read_pnm(image_path).map_err(|e| CliError::from(e).context(image_path.display()))?;
    let x = ctx.cfg.preprocess_for(&config).apply(&img.to_rgb())?;
    let p = match ckpt.kind {
        CheckpointKind::Quantized => QuantizedModel::from_checkpoint(ckpt)?.predict(&x)?,
        _ => model_of(&ckpt, model_path)?.predict(&x)?,
    };
    let name = |c: usize| PlantClass::ALL[c].name();
    println!("class: {}", name(p.predicted_class()));
    let mut ranked: Vec<(usize, f64)> = p.class_probs.data().iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let probs: Vec<String> = ranked.iter().map(|(c, v)| format!("{} {v:.4}", name(*c))).collect();
    println!("probabilities: {}", probs.join(", "));
    println!("growth: {:.4}", p.growth);
    let labels = p.mask_labels();
    let share: Vec<String> = (0..NUM_CLASSES)
        .map(|c| format!("{} {:.4}", name(c), labels.iter().filter(|&&l| l as usize == c).count() as f64 / labels.len() as f64))
        .collect();
    println!("mask: {}", share.join(", "));
    Ok(())
}
