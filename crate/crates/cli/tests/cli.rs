use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ldn_core::dataset::{
    bundled_font, procedural_background, synth_scene, BackgroundKind, LoadedFont, SceneSpec,
};
use ldn_core::Image;

/// Tiny networks and step counts so the whole pipeline runs in seconds.
const TINY: &str = r#"
[dataset]
n_fonts = 10

[dataset.geometry]
size = 16

[inpaint]
n_images = 2

[inpaint.model]
input_size = 16
hole_size = 8
enc_channels = [3, 4]
latent_dim = 8
dec_channels = [4, 3]
disc_channels = [3, 4]

[inpaint.train]
steps = 3
batch_size = 2

[glyph.net]
glyph_size = 16
enc_channels = [4]
latent_dim = 8
dec_channels = [4]

[glyph.orna]
glyph_size = 16
hidden = [4, 4]
disc_channels = [2, 2]

[glyph.pretrain]
steps = 3
batch_size = 2

[glyph.finetune]
steps = 2
batch_size = 2
color_slots = 2

[edit.adapt]
steps = 2
"#;

fn ldn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\n{}",
        o.status.code(),
        stderr(&o)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

struct Scene {
    image: PathBuf,
    boxes: PathBuf,
    word_box: String,
    original: Image,
    word: ldn_core::Rect,
}

fn scene(dir: &Path) -> Scene {
    let font = LoadedFont::load(&bundled_font("DejaVuSans")).unwrap();
    let bg = procedural_background(BackgroundKind::Flat, 96, 40, 1);
    let spec = SceneSpec {
        text: "E5".into(),
        origin: (8, 4),
        scale: 24.0,
        spacing: 3.0,
        seed: 2,
        ink: None,
    };
    let sc = synth_scene(&bg, &font, &spec).unwrap();
    let image = dir.join("scene.png");
    sc.image.save_png(&image).unwrap();
    let boxes = dir.join("boxes.json");
    let arr: Vec<[i32; 4]> = sc.char_boxes.iter().map(|r| [r.x, r.y, r.w, r.h]).collect();
    std::fs::write(&boxes, serde_json::to_string(&arr).unwrap()).unwrap();
    let w = sc.word_box;
    // What the CLI reads back: the 8-bit quantized scene.
    let original = Image::load_png(&image).unwrap();
    Scene {
        image,
        boxes,
        word_box: format!("{},{},{},{}", w.x, w.y, w.w, w.h),
        original,
        word: w,
    }
}

#[test]
fn full_pipeline_with_tiny_models() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = tiny_config(t);
    let c = s(&cfg);
    let (gray, color, ck) = (t.join("data/gray"), t.join("data/color"), t.join("ck"));

    ok(ldn(&["--config", c, "dataset", "build", "--out", s(&gray)]));
    ok(ldn(&[
        "--config",
        c,
        "dataset",
        "build",
        "--color",
        "--out",
        s(&color),
    ]));
    assert!(gray.join("run.json").exists());
    ok(ldn(&["--config", c, "train-inpaint", "--out", s(&ck)]));
    ok(ldn(&[
        "--config",
        c,
        "train-glyph",
        "--stage",
        "pretrain",
        "--data",
        s(&t.join("data")),
        "--out",
        s(&ck),
    ]));
    ok(ldn(&[
        "--config",
        c,
        "train-glyph",
        "--stage",
        "finetune",
        "--data",
        s(&color),
        "--out",
        s(&ck),
    ]));
    for d in ["inpaint", "glyph_pretrain", "glyph", "orna"] {
        assert!(ck.join(d).join("run.json").exists(), "{d}");
    }

    let sc = scene(t);
    let out = t.join("edited.png");
    ok(ldn(&[
        "--config",
        c,
        "edit",
        "--image",
        s(&sc.image),
        "--box",
        &sc.word_box,
        "--char-boxes",
        s(&sc.boxes),
        "--source",
        "E5",
        "--target",
        "A9",
        "--ckpt-dir",
        s(&ck),
        "--out",
        s(&out),
    ]));
    let edited = Image::load_png(&out).unwrap();
    for y in 0..edited.height() {
        for x in 0..edited.width() {
            if !sc.word.contains_point(x as i32, y as i32) {
                assert_eq!(edited.pixel(x, y), sc.original.pixel(x, y), "({x},{y})");
            }
        }
    }
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(audit["target_text"], "A9");
    assert_eq!(audit["placements"].as_array().unwrap().len(), 2);

    let ev = t.join("eval");
    let o = ok(ldn(&[
        "--config",
        c,
        "eval",
        "--ckpt-dir",
        s(&ck),
        "--out",
        s(&ev),
        "--samples",
        "2",
        "--data",
        s(&gray),
    ]));
    let summary = std::fs::read_to_string(ev.join("summary.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), summary);
    for m in ["background_ssim", "ink_iou", "glyph_l1_unobserved"] {
        assert!(summary.contains(m), "{summary}");
    }
    let jsonl = std::fs::read_to_string(ev.join("metrics.jsonl")).unwrap();
    for line in jsonl.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    // A different configuration may not silently replace the artifacts.
    let o = ldn(&[
        "--config",
        c,
        "--seed",
        "5",
        "train-inpaint",
        "--out",
        s(&ck),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    ok(ldn(&[
        "--config",
        c,
        "--seed",
        "5",
        "--force",
        "train-inpaint",
        "--out",
        s(&ck),
    ]));
}

#[test]
fn print_config_layers_flags_over_file_over_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let args = [
        "--config",
        s(&cfg),
        "--seed",
        "7",
        "--print-config",
        "train-inpaint",
        "--steps",
        "11",
    ];
    let a = ok(ldn(&args));
    let b = ok(ldn(&args));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let c = ldn_core::config::RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(c.inpaint.train.steps, 11);
    assert_eq!(c.inpaint.train.seed, 7);
    assert_eq!(c.inpaint.model.input_size, 16);
    assert_eq!(c.glyph.pretrain.adam.lr, 1e-3);
}

#[test]
fn usage_errors_exit_2() {
    let o = ldn(&["edit", "--image", "a.png"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--target"));

    let o = ldn(&["train-inpaint", "--out", "x", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[glyph.pretrain]\nstepz = 3\n").unwrap();
    let o = ldn(&["--config", s(&bad), "--print-config"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));
}

#[test]
fn runtime_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sc = scene(t);
    let out = t.join("o.png");
    let edit = |ck: &Path, word_box: &str| {
        ldn(&[
            "edit",
            "--image",
            s(&sc.image),
            "--box",
            word_box,
            "--char-boxes",
            s(&sc.boxes),
            "--source",
            "E5",
            "--target",
            "A9",
            "--ckpt-dir",
            s(ck),
            "--out",
            s(&out),
        ])
    };

    let o = edit(&t.join("missing"), &sc.word_box);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("eval_harness"), "{}", stderr(&o));

    let o = edit(&t.join("missing"), "90,0,50,50");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("compositor_pipeline"), "{}", stderr(&o));

    // An inpainter whose weights are NaN.
    let cfg = tiny_config(t);
    let ck = t.join("ck");
    ok(ldn(&[
        "--config",
        s(&cfg),
        "train-inpaint",
        "--out",
        s(&ck),
    ]));
    let glyph = ldn_core::glyph::GlyphNet::<f32>::new(&ldn_core::glyph::GlyphNetConfig::micro(), 0)
        .unwrap();
    let observed = ldn_core::glyph::ObservedRange::default();
    glyph
        .to_checkpoint(0, 0, observed, &[])
        .save(&ck.join("glyph"))
        .unwrap();
    let orna =
        ldn_core::glyph::OrnaNet::<f32>::new(&ldn_core::glyph::OrnaNetConfig::micro(), 0).unwrap();
    orna.to_checkpoint(0, 0, &[])
        .save(&ck.join("orna"))
        .unwrap();
    let inpaint = ldn_core::eval::Checkpoint::load(&ck.join("inpaint")).unwrap();
    let m = inpaint.meta;
    let broken = ldn_core::eval::Checkpoint::new(
        m.kind,
        m.config_hash,
        m.seed,
        m.step,
        vec![f32::NAN; m.param_count],
        m.info,
    );
    std::fs::remove_dir_all(ck.join("inpaint")).unwrap();
    broken.save(&ck.join("inpaint")).unwrap();
    let o = edit(&ck, &sc.word_box);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("background_restorer"), "{}", stderr(&o));
}
