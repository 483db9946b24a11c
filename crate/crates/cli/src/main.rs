use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ldn_core::compose::{edit_text, score_edit, EditRequest};
use ldn_core::config::RunConfig;
use ldn_core::dataset::{
    build_font_dataset, bundled_font_dir, discover_fonts, expand_fonts, load_font_glyphs,
    procedural_background, synth_scene, BackgroundKind, DatasetManifest, FontGlyphs, FontSource,
    LoadedFont, SceneSpec, Split, HEADER_FILE,
};
use ldn_core::eval::{l1_metric, Checkpoint, MetricReport, Region};
use ldn_core::glyph::{
    finetune_pipeline_with, predict_glyph_shapes, pretrain_glyphnet_with, GlyphNet,
    HiddenSlotSampler, ObservedRange,
};
use ldn_core::inpaint::train_inpainter_with;
use ldn_core::{CharSet, Error, Image, Rect};

const RUN_FILE: &str = "run.json";

#[derive(Parser, Debug)]
#[command(
    name = "ldn",
    version,
    about = "Scene text editing: restore a word's background, learn its font from the visible glyphs, write new text in that style"
)]
struct Cli {
    /// TOML configuration (JSON if the name ends in .json) layered over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Sets every seed in the configuration.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    /// Prints the effective configuration as TOML and exits.
    #[arg(long, global = true)]
    print_config: bool,
    /// Overwrites artifacts that were produced under a different configuration.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Glyph datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Trains the background inpainter.
    TrainInpaint(TrainInpaintArgs),
    /// Pretrains the glyph network or fine-tunes it jointly with the color network.
    TrainGlyph(TrainGlyphArgs),
    /// Replaces the text of one word in an image.
    Edit(EditArgs),
    /// Scores trained checkpoints on synthetic scenes with known ground truth.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Renders one glyph set (grayscale, or color with --color) into OUT.
    Build(BuildArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Directory of .ttf/.otf files (default: the bundled fonts).
    #[arg(long, value_name = "DIR")]
    fonts: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    n_fonts: Option<usize>,
    /// Glyph side in pixels.
    #[arg(long, value_name = "PX")]
    size: Option<usize>,
    /// Colored glyphs (gradients, outlines, highlights) instead of grayscale masks.
    #[arg(long)]
    color: bool,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainInpaintArgs {
    /// Directory of PNG training images (default: procedural backgrounds).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint root; the inpainter is written to OUT/inpaint.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    #[arg(long, value_name = "X")]
    lambda_adv: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Args, Debug)]
struct TrainGlyphArgs {
    /// Dataset root from `dataset build` (or a single set directory).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint root: pretraining writes OUT/glyph_pretrain, fine-tuning
    /// writes OUT/glyph and OUT/orna.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    stage: Option<Stage>,
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Pretrained glyph checkpoint for fine-tuning (default: OUT/glyph_pretrain).
    #[arg(long, value_name = "DIR")]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[arg(long, value_name = "IN.png")]
    image: Option<PathBuf>,
    /// Word box as x,y,w,h.
    #[arg(long = "box", value_name = "x,y,w,h")]
    word_box: Option<String>,
    /// JSON array of character boxes, each [x,y,w,h] or {"x":..,"y":..,"w":..,"h":..}.
    #[arg(long, value_name = "FILE.json")]
    char_boxes: Option<PathBuf>,
    #[arg(long, value_name = "TEXT")]
    source: Option<String>,
    #[arg(long, value_name = "TEXT")]
    target: Option<String>,
    /// Directory holding inpaint/, glyph/ and orna/ checkpoints.
    #[arg(long, value_name = "DIR")]
    ckpt_dir: Option<PathBuf>,
    #[arg(long, value_name = "OUT.png")]
    out: Option<PathBuf>,
    /// Audit JSON (default: OUT with a .json extension).
    #[arg(long, value_name = "OUT.json")]
    audit: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory holding inpaint/, glyph/ and orna/ checkpoints.
    #[arg(long, value_name = "DIR")]
    ckpt_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Synthetic edit scenes to score.
    #[arg(long, value_name = "N", default_value_t = 8)]
    samples: usize,
    /// Grayscale dataset whose test fonts also score glyph completion.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

/// A failure and the exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}

fn effective_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    match &cli.command {
        Some(Command::Dataset {
            action: DatasetCommand::Build(a),
        }) => {
            if let Some(d) = &a.fonts {
                cfg.dataset.font_dir = Some(d.clone());
            }
            if let Some(n) = a.n_fonts {
                cfg.dataset.n_fonts = n;
            }
            if let Some(px) = a.size {
                cfg.dataset.geometry.size = px;
            }
        }
        Some(Command::TrainInpaint(a)) => {
            if let Some(n) = a.steps {
                cfg.inpaint.train.steps = n;
            }
            if let Some(x) = a.lambda_adv {
                cfg.inpaint.train.lambda_adv = x;
            }
        }
        Some(Command::TrainGlyph(a)) => {
            if let Some(n) = a.steps {
                match a.stage {
                    Some(Stage::Finetune) => cfg.glyph.finetune.steps = n,
                    _ => cfg.glyph.pretrain.steps = n,
                }
            }
        }
        _ => {}
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(usage("no command given (see --help)"));
    };
    let ctx = Ctx {
        cfg: &cfg,
        hash: cfg.hash(),
        force: cli.force,
    };
    match command {
        Command::Dataset {
            action: DatasetCommand::Build(a),
        } => ctx.dataset_build(a),
        Command::TrainInpaint(a) => ctx.train_inpaint(a),
        Command::TrainGlyph(a) => ctx.train_glyph(a),
        Command::Edit(a) => ctx.edit(a),
        Command::Eval(a) => ctx.eval(a),
    }
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Outcome<&'a T> {
    v.as_ref()
        .ok_or_else(|| usage(format!("missing required flag {flag}")))
}

/// Names every absent flag at once; `(flag, present)` pairs.
fn require_all(flags: &[(&str, bool)]) -> Outcome {
    let missing: Vec<&str> = flags.iter().filter(|f| !f.1).map(|f| f.0).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(usage(format!(
            "missing required flags: {}",
            missing.join(", ")
        )))
    }
}

#[derive(Serialize, Deserialize)]
struct RunRecord {
    command: String,
    config_hash: String,
    config: RunConfig,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    hash: String,
    force: bool,
}

impl Ctx<'_> {
    /// Refuses to replace an artifact directory written under another
    /// configuration unless `--force` was given.
    fn claim(&self, dir: &Path) -> Outcome {
        let p = dir.join(RUN_FILE);
        if let Ok(text) = std::fs::read_to_string(&p) {
            let old: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
            let old_hash = old
                .get("config_hash")
                .and_then(|v| v.as_str())
                .unwrap_or("");
            if old_hash != self.hash && !self.force {
                return Err(Error::Invalid(format!(
                    "{} was produced by configuration {old_hash}, current configuration is {}; pass --force to overwrite",
                    dir.display(),
                    self.hash
                ))
                .into());
            }
        }
        Ok(())
    }

    fn record(&self, dir: &Path, command: &str) -> Outcome {
        let rec = RunRecord {
            command: command.into(),
            config_hash: self.hash.clone(),
            config: self.cfg.clone(),
        };
        write_json(&dir.join(RUN_FILE), &rec)
    }

    fn base_fonts(&self) -> ldn_core::Result<Vec<FontSource>> {
        let dir = self
            .cfg
            .dataset
            .font_dir
            .clone()
            .unwrap_or_else(bundled_font_dir);
        let fonts = discover_fonts(&dir)?;
        if fonts.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no .ttf/.otf fonts in {}",
                dir.display()
            )));
        }
        Ok(fonts)
    }

    fn dataset_build(&self, a: &BuildArgs) -> Outcome {
        let out = required(&a.out, "--out")?;
        let fonts = self
            .base_fonts()
            .and_then(|b| expand_fonts(&b, self.cfg.dataset.n_fonts))
            .map_err(|e| e.in_stage("dataset_forge::expand_fonts"))?;
        self.claim(out)?;
        let t = Instant::now();
        let report = build_font_dataset(&fonts, &self.cfg.dataset.dataset_config(a.color), out)
            .map_err(|e| e.in_stage("dataset_forge::build_font_dataset"))?;
        for r in &report.rejects {
            eprintln!("rejected font {}: {}", r.font_id, r.error);
        }
        eprintln!(
            "{} records from {} fonts in {:.1}s -> {}",
            report.manifest.records.len(),
            report.manifest.font_ids().len(),
            t.elapsed().as_secs_f64(),
            out.display()
        );
        self.record(
            out,
            if a.color {
                "dataset build --color"
            } else {
                "dataset build"
            },
        )
    }

    fn train_inpaint(&self, a: &TrainInpaintArgs) -> Outcome {
        let out = required(&a.out, "--out")?.join("inpaint");
        self.claim(&out)?;
        let sec = &self.cfg.inpaint;
        let images = match &a.data {
            Some(d) => load_pngs(d)?,
            None => ldn_core::dataset::training_backgrounds(
                sec.n_images,
                sec.model.input_size,
                sec.image_seed,
            ),
        };
        let mut history = Vec::new();
        let every = (sec.train.steps / 20).max(1);
        let (ck, _) = train_inpainter_with(&images, &sec.model, &sec.train, |r| {
            if r.step % every == 0 || r.step + 1 == sec.train.steps {
                eprintln!(
                    "step {:>6}  recon {:.5}  adv_g {:.4}  adv_d {:.4}",
                    r.step, r.recon, r.adv_g, r.adv_d
                );
            }
            history.push(*r);
        })
        .map_err(|e| e.in_stage("background_restorer::train_inpainter"))?;
        ck.save(&out)?;
        write_jsonl(&out.join("history.jsonl"), &history)?;
        self.record(&out, "train-inpaint")?;
        eprintln!("checkpoint {} -> {}", ck.id(), out.display());
        Ok(())
    }

    fn train_glyph(&self, a: &TrainGlyphArgs) -> Outcome {
        let data = required(&a.data, "--data")?;
        let root = required(&a.out, "--out")?;
        let g = &self.cfg.glyph;
        match required(&a.stage, "--stage")? {
            Stage::Pretrain => {
                let out = root.join("glyph_pretrain");
                self.claim(&out)?;
                let fonts = load_set(data, "gray", Some(Split::Train))?;
                let net = GlyphNet::new(&g.net, g.pretrain.seed)?;
                let mut history = Vec::new();
                let every = (g.pretrain.steps / 20).max(1);
                let (ck, _) = pretrain_glyphnet_with(net, &fonts, &g.pretrain, |r| {
                    if r.step % every == 0 || r.step + 1 == g.pretrain.steps {
                        eprintln!("step {:>6}  shape {:.5}", r.step, r.shape);
                    }
                    history.push(*r);
                })
                .map_err(|e| e.in_stage("glyph_transfer::pretrain_glyphnet"))?;
                ck.save(&out)?;
                write_jsonl(&out.join("history.jsonl"), &history)?;
                self.record(&out, "train-glyph --stage pretrain")?;
                eprintln!("checkpoint {} -> {}", ck.id(), out.display());
            }
            Stage::Finetune => {
                let init_dir = a
                    .init
                    .clone()
                    .unwrap_or_else(|| root.join("glyph_pretrain"));
                let init = Checkpoint::load(&init_dir)
                    .map_err(|e| e.in_stage("eval_harness::load_checkpoint"))?;
                let (glyph_dir, orna_dir) = (root.join("glyph"), root.join("orna"));
                self.claim(&glyph_dir)?;
                self.claim(&orna_dir)?;
                let fonts = load_set(data, "color", Some(Split::Train))?;
                let mut history = Vec::new();
                let every = (g.finetune.steps / 20).max(1);
                let out = finetune_pipeline_with(&init, &fonts, &g.orna, &g.finetune, |r| {
                    if r.step % every == 0 || r.step + 1 == g.finetune.steps {
                        eprintln!(
                            "step {:>6}  shape {:.5}  color {:.5}  adv_g {:.4}  adv_d {:.4}",
                            r.step, r.shape, r.color, r.adv_g, r.adv_d
                        );
                    }
                    history.push(*r);
                })
                .map_err(|e| e.in_stage("glyph_transfer::finetune_pipeline"))?;
                out.glyph.save(&glyph_dir)?;
                out.orna.save(&orna_dir)?;
                write_jsonl(&orna_dir.join("history.jsonl"), &history)?;
                self.record(&glyph_dir, "train-glyph --stage finetune")?;
                self.record(&orna_dir, "train-glyph --stage finetune")?;
                eprintln!(
                    "checkpoints {} {} -> {}",
                    out.glyph.id(),
                    out.orna.id(),
                    root.display()
                );
            }
        }
        Ok(())
    }

    fn edit(&self, a: &EditArgs) -> Outcome {
        require_all(&[
            ("--image", a.image.is_some()),
            ("--box", a.word_box.is_some()),
            ("--char-boxes", a.char_boxes.is_some()),
            ("--source", a.source.is_some()),
            ("--target", a.target.is_some()),
            ("--ckpt-dir", a.ckpt_dir.is_some()),
            ("--out", a.out.is_some()),
        ])?;
        let image_path = required(&a.image, "--image")?;
        let word_box =
            Rect::parse(required(&a.word_box, "--box")?).map_err(|e| usage(e.to_string()))?;
        let boxes_path = required(&a.char_boxes, "--char-boxes")?;
        let source = required(&a.source, "--source")?;
        let target = required(&a.target, "--target")?;
        let ckpt_dir = required(&a.ckpt_dir, "--ckpt-dir")?;
        let out = required(&a.out, "--out")?;
        let audit_path = a
            .audit
            .clone()
            .unwrap_or_else(|| out.with_extension("json"));
        if !self.force && audit_path.exists() {
            let old: serde_json::Value = std::fs::read_to_string(&audit_path)
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok())
                .unwrap_or_default();
            if old.get("config_hash").and_then(|v| v.as_str()) != Some(self.hash.as_str()) {
                return Err(Error::Invalid(format!(
                    "{} was produced under another configuration; pass --force to overwrite",
                    audit_path.display()
                ))
                .into());
            }
        }
        let char_boxes = read_boxes(boxes_path)?;
        let request = EditRequest {
            image: Image::load_png(image_path)?,
            word_box,
            char_boxes,
            source_text: source.clone(),
            target_text: target.clone(),
        };
        request
            .validate()
            .map_err(|e| e.in_stage("compositor_pipeline::request"))?;
        let (inpaint, glyph, orna) = load_edit_checkpoints(ckpt_dir)?;
        let seed = self.cfg.glyph.finetune.seed;
        let edited = edit_text(&request, &inpaint, &glyph, &orna, &self.cfg.edit, seed)?;
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.into(),
                source: e,
            })?;
        }
        edited.image.save_png(out)?;
        let audit = serde_json::json!({
            "config_hash": self.hash,
            "source_text": source,
            "target_text": target,
            "word_box": word_box,
            "char_boxes": request.char_boxes,
            "placements": edited.audit.placements,
            "checkpoints": edited.audit.checkpoints,
            "seeds": edited.audit.seeds,
            "observed": edited.audit.observed,
            "adapt_loss": edited.audit.adapt_loss,
            "stage_timings": edited.audit.stage_timings,
        });
        write_json(&audit_path, &audit)?;
        eprintln!(
            "{} -> {} (audit {})",
            image_path.display(),
            out.display(),
            audit_path.display()
        );
        Ok(())
    }

    fn eval(&self, a: &EvalArgs) -> Outcome {
        let ckpt_dir = required(&a.ckpt_dir, "--ckpt-dir")?;
        let out = required(&a.out, "--out")?;
        self.claim(out)?;
        let (inpaint, glyph, orna) = load_edit_checkpoints(ckpt_dir)?;
        let net = GlyphNet::<f32>::from_checkpoint(&glyph)?;
        let geom = ldn_core::dataset::GlyphGeometry {
            size: net.config.glyph_size,
            ..self.cfg.dataset.geometry
        };
        let fonts: Vec<LoadedFont> = self
            .base_fonts()
            .and_then(|f| f.iter().map(LoadedFont::load).collect())
            .map_err(|e| e.in_stage("eval_harness::evaluate"))?;
        let mut rows: Vec<MetricReport> = Vec::new();
        let mut lines = Vec::new();
        let mut rng = SplitMix(self.cfg.dataset.seed ^ 0xe7a1);
        let symbols: Vec<char> = CharSet.chars().collect();
        for i in 0..a.samples {
            let font = &fonts[i % fonts.len()];
            let len = 2 + rng.below(3) as usize;
            let pick = |rng: &mut SplitMix| -> String {
                (0..len).map(|_| symbols[rng.below(62) as usize]).collect()
            };
            let (source, target) = (pick(&mut rng), pick(&mut rng));
            let bg = procedural_background(BackgroundKind::Flat, 320, 96, rng.next());
            let spec = SceneSpec {
                text: source.clone(),
                origin: (16, 12),
                scale: 44.0,
                spacing: 4.0,
                seed: rng.next(),
                ink: None,
            };
            let scene = synth_scene(&bg, font, &spec)
                .map_err(|e| e.in_stage("dataset_forge::synth_scene"))?;
            let request = EditRequest {
                image: scene.image.clone(),
                word_box: scene.word_box,
                char_boxes: scene.char_boxes.clone(),
                source_text: source.clone(),
                target_text: target.clone(),
            };
            let edited = edit_text(&request, &inpaint, &glyph, &orna, &self.cfg.edit, i as u64)?;
            let s = score_edit(&scene, &edited, font, &target, &geom)
                .map_err(|e| e.in_stage("eval_harness::evaluate"))?;
            let ious: Vec<f64> = s.ink_iou.iter().map(|&(_, v)| v).collect();
            let wb = scene.word_box.area() as usize;
            let outside = scene.image.width() * scene.image.height() - wb;
            let sample = vec![
                MetricReport::new(
                    "outside_changed_fraction",
                    s.outside_changed as f64 / outside as f64,
                    Region::Full,
                    outside,
                )?,
                MetricReport::new("background_ssim", s.background_ssim, Region::Masked, wb)?,
                MetricReport::mean("ink_iou", &ious, Region::Ink)?,
            ];
            for m in &sample {
                lines.push(serde_json::json!({
                    "sample": i, "font": font.id(), "source": source, "target": target, "metric": m,
                }));
            }
            rows.extend(sample);
        }
        if let Some(data) = &a.data {
            let fonts = load_set(data, "gray", Some(Split::Test))?;
            let mut sampler = HiddenSlotSampler::new(
                self.cfg.dataset.seed,
                fonts.len().max(1),
                ObservedRange { min: 4, max: 4 },
            )
            .map_err(|e| e.in_stage("eval_harness::evaluate"))?;
            for f in &fonts {
                let obs = sampler.draw().observed;
                let l1 = glyph_completion_l1(&net, f, &obs)?;
                let m = MetricReport::new("glyph_l1_unobserved", l1, Region::Full, 62 - obs.len())?;
                lines.push(serde_json::json!({"font": f.font_id, "observed": obs, "metric": m}));
                rows.push(m);
            }
        }
        std::fs::create_dir_all(out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        write_jsonl(&out.join("metrics.jsonl"), &lines)?;
        let summary = summarize(&rows);
        std::fs::write(out.join("summary.txt"), &summary).map_err(|e| Error::Io {
            path: out.join("summary.txt"),
            source: e,
        })?;
        print!("{summary}");
        self.record(out, "eval")?;
        Ok(())
    }
}

/// Mean unobserved-slot L1 of the completed stack of `font` given `observed` slots.
fn glyph_completion_l1(net: &GlyphNet<f32>, font: &FontGlyphs, observed: &[usize]) -> Outcome<f64> {
    let glyphs: Vec<_> = observed.iter().map(|&i| font.glyphs[i].clone()).collect();
    let stack = ldn_core::glyph::assemble_input(&glyphs)?;
    let pred = predict_glyph_shapes(net, &stack)?;
    let mut total = 0.0;
    let mut n = 0;
    for (i, g) in font.glyphs.iter().enumerate() {
        if !stack.observed[i] {
            total += l1_metric(&pred[i], &g.ink, None)?;
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

fn summarize(rows: &[MetricReport]) -> String {
    let mut names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    names.dedup();
    names.sort_unstable();
    names.dedup();
    let mut s = format!(
        "{:<28} {:>8} {:>10} {:>10} {:>10}\n",
        "metric", "samples", "mean", "min", "max"
    );
    for name in names {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.name == name)
            .map(|r| r.value)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.push_str(&format!(
            "{name:<28} {:>8} {mean:>10.4} {min:>10.4} {max:>10.4}\n",
            v.len()
        ));
    }
    s
}

/// Small deterministic generator for picking evaluation scenes.
struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: u64) -> u64 {
        ((self.next() >> 32) * n) >> 32
    }
}

fn load_edit_checkpoints(dir: &Path) -> Outcome<(Checkpoint, Checkpoint, Checkpoint)> {
    let load = |name: &str| {
        Checkpoint::load(&dir.join(name)).map_err(|e| e.in_stage("eval_harness::load_checkpoint"))
    };
    Ok((load("inpaint")?, load("glyph")?, load("orna")?))
}

/// Loads one glyph set: `dir` itself when it holds a dataset header,
/// otherwise its `name` subdirectory.
fn load_set(dir: &Path, name: &str, split: Option<Split>) -> Outcome<Vec<FontGlyphs>> {
    let set = if dir.join(HEADER_FILE).exists() {
        dir.to_path_buf()
    } else {
        dir.join(name)
    };
    let manifest =
        DatasetManifest::read(&set).map_err(|e| e.in_stage("dataset_forge::read_manifest"))?;
    let fonts = load_font_glyphs(&set, &manifest, split)
        .map_err(|e| e.in_stage("dataset_forge::load_font_glyphs"))?;
    if fonts.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no fonts in the {split:?} split",
            set.display()
        ))
        .into());
    }
    Ok(fonts)
}

fn load_pngs(dir: &Path) -> Outcome<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG images in {}", dir.display())).into());
    }
    Ok(paths
        .iter()
        .map(|p| Image::load_png(p))
        .collect::<ldn_core::Result<_>>()?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BoxSpec {
    Array([i32; 4]),
    Object(Rect),
}

fn read_boxes(path: &Path) -> Outcome<Vec<Rect>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let specs: Vec<BoxSpec> =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(specs
        .into_iter()
        .map(|b| match b {
            BoxSpec::Array([x, y, w, h]) => Rect::new(x, y, w, h),
            BoxSpec::Object(r) => r,
        })
        .collect())
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Outcome {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("serializable"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}
