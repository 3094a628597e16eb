use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};

use headtrack::fusion::{project_branches, split_regroup, ForwardTrace, FusionParams};
use headtrack::geometry::BBox;
use headtrack::mot_io::{parse_annotations, read_annotation_file, write_annotations, AnnotationRecord, FieldOrder};
use headtrack::motion_maps::{read_raw_map, write_png_frame, ImageFrame, SourceStack};
use serde_json::Value;

fn headtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = headtrack(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    headtrack(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rec(frame: u32, id: u32, left: f64) -> AnnotationRecord {
    AnnotationRecord::new(frame, id, BBox::new(left, 0.0, 10.0, 10.0).unwrap())
}

fn write(path: &Path, records: &[AnnotationRecord]) {
    std::fs::write(path, write_annotations(records, FieldOrder::IdFirst)).unwrap();
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn version_and_help() {
    assert!(ok(&["--version"]).contains(env!("CARGO_PKG_VERSION")));
    assert!(ok(&["--help"]).contains("gen-scenario"));
    assert_eq!(code(&["no-such-command"]), 2);
}

#[test]
fn zero_noise_tracking_reproduces_gt_up_to_relabel() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, dets, tracks) = (
        dir.path().join("gt.txt"),
        dir.path().join("dets.txt"),
        dir.path().join("tracks.txt"),
    );
    ok(&[
        "gen-scenario",
        "--seed",
        "2",
        "--out-gt",
        p(&gt),
        "--out-dets",
        p(&dets),
    ]);
    ok(&["track", "--dets", p(&dets), "--mode", "sort", "--out", p(&tracks)]);

    let g = read_annotation_file(&gt, FieldOrder::IdFirst).unwrap();
    let t = read_annotation_file(&tracks, FieldOrder::IdFirst).unwrap();
    assert_eq!(g.len(), t.len());
    let key = |r: &AnnotationRecord| (r.frame, r.bbox.left().to_bits(), r.bbox.top().to_bits());
    let by_box: BTreeMap<_, u32> = g.iter().map(|r| (key(r), r.track_id)).collect();
    let mut mapping = BTreeMap::new();
    for r in &t {
        let gt_id = by_box[&key(r)];
        assert_eq!(
            *mapping.entry(r.track_id).or_insert(gt_id),
            gt_id,
            "track {} changes identity",
            r.track_id
        );
    }
    let targets: BTreeSet<u32> = mapping.values().copied().collect();
    assert_eq!(targets.len(), mapping.len(), "two tracks map to one gt id");

    let report = json(&ok(&["evaluate", "--gt", p(&gt), "--pred", p(&tracks), "--json"]));
    let row = &report["sequences"][0];
    assert_eq!(row["MOTA"], 1.0);
    assert_eq!(row["IDF1"], 1.0);
    assert_eq!(row["IDs"], 0);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = dir.path().join("dets");
    std::fs::create_dir(&seqs).unwrap();
    for seed in 0..3 {
        let gt = dir.path().join(format!("gt{seed}.txt"));
        let dets = seqs.join(format!("seq{seed}.txt"));
        ok(&[
            "gen-scenario",
            "--preset",
            "occlusion",
            "--seed",
            &seed.to_string(),
            "--out-gt",
            p(&gt),
            "--out-dets",
            p(&dets),
        ]);
    }
    let again = dir.path().join("again.txt");
    ok(&[
        "gen-scenario",
        "--preset",
        "occlusion",
        "--seed",
        "1",
        "--out-gt",
        p(&again),
        "--out-dets",
        p(&dir.path().join("again_dets.txt")),
    ]);
    assert_eq!(
        std::fs::read(dir.path().join("gt1.txt")).unwrap(),
        std::fs::read(&again).unwrap()
    );
    assert_eq!(
        std::fs::read(seqs.join("seq1.txt")).unwrap(),
        std::fs::read(dir.path().join("again_dets.txt")).unwrap()
    );

    let (one, four) = (dir.path().join("one"), dir.path().join("four"));
    ok(&[
        "track",
        "--jobs",
        "1",
        "--dets",
        p(&seqs),
        "--mode",
        "byte",
        "--out",
        p(&one),
    ]);
    ok(&[
        "track",
        "--jobs",
        "4",
        "--dets",
        p(&seqs),
        "--mode",
        "byte",
        "--out",
        p(&four),
    ]);
    for seed in 0..3 {
        let name = format!("seq{seed}.txt");
        let a = std::fs::read(one.join(&name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(four.join(&name)).unwrap());
    }
    let m1: Value = json(&std::fs::read_to_string(one.join("manifest.json")).unwrap());
    assert_eq!(m1["command"], "track");
    assert_eq!(m1["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_scenario_manifest_records_seed_and_configs() {
    let dir = tempfile::tempdir().unwrap();
    let noise = dir.path().join("noise.toml");
    std::fs::write(&noise, "miss_rate = 0.2\nseed = 4\n").unwrap();
    let gt = dir.path().join("gt.txt");
    let dets = dir.path().join("dets.txt");
    ok(&[
        "gen-scenario",
        "--noise",
        p(&noise),
        "--seed",
        "9",
        "--out-gt",
        p(&gt),
        "--out-dets",
        p(&dets),
    ]);
    let m = json(&std::fs::read_to_string(dir.path().join("gt.txt.manifest.json")).unwrap());
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config_paths"][0], p(&noise));
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    let g = read_annotation_file(&gt, FieldOrder::IdFirst).unwrap();
    let d = read_annotation_file(&dets, FieldOrder::IdFirst).unwrap();
    assert!(d.len() < g.len());
    assert!(dir.path().join("gt.toml").exists());
}

#[test]
fn input_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.txt");
    assert_eq!(code(&["track", "--dets", "/no/such/file.txt", "--out", p(&out)]), 2);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1, 1, 57, 86\n").unwrap();
    let run = headtrack(&["track", "--dets", p(&bad), "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("line 1"));

    let dets = dir.path().join("dets.txt");
    write(&dets, &[rec(1, 1, 0.0)]);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "max_agee = 3\n").unwrap();
    assert_eq!(
        code(&["track", "--dets", p(&dets), "--config", p(&cfg), "--out", p(&out)]),
        3
    );
    assert_eq!(
        code(&["track", "--dets", p(&dets), "--low", "0.7", "--out", p(&out)]),
        3
    );
    assert_eq!(
        code(&["evaluate", "--gt", p(&dets), "--pred", p(&dets), "--iou", "1.5"]),
        3
    );
    assert_eq!(
        code(&["resample", "--ann", p(&dets), "--factor", "0", "--out", p(&out)]),
        3
    );
    assert_eq!(
        code(&["track", "--dets", p(&dets), "--mode", "deepsort", "--out", p(&out)]),
        2
    );

    // a config file sets the mode, a flag overrides it
    std::fs::write(&cfg, "mode = \"byte\"\nmax_age = 5\n").unwrap();
    ok(&[
        "track",
        "--dets",
        p(&dets),
        "--config",
        p(&cfg),
        "--mode",
        "sort",
        "--out",
        p(&out),
    ]);
    let m = json(&std::fs::read_to_string(dir.path().join("o.txt.manifest.json")).unwrap());
    assert_eq!(m["config_paths"][0], p(&cfg));
}

#[test]
fn evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt.txt"), dir.path().join("pred.txt"));
    let mut g = Vec::new();
    let mut pr = Vec::new();
    for f in 1..=3 {
        g.push(rec(f, 1, 0.0));
        g.push(rec(f, 2, 50.0));
        pr.push(rec(f, 11, 0.0));
        if f != 3 {
            pr.push(rec(f, 12, 50.0));
        }
    }
    pr.push(AnnotationRecord::new(
        2,
        13,
        BBox::new(100.0, 100.0, 10.0, 10.0).unwrap(),
    ));
    write(&gt, &g);
    write(&pred, &pr);

    let table = ok(&["evaluate", "--gt", p(&gt), "--pred", p(&gt)]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(
        header,
        ["Sequence", "IDF1", "IDs", "IDP", "IDR", "MT", "PT", "ML", "Rcll", "Prcn", "MOTA", "FP", "FN"]
    );
    assert!(table.lines().nth(1).unwrap().contains("100.00"));

    let out = dir.path().join("report.txt");
    let r = json(&ok(&[
        "evaluate",
        "--gt",
        p(&gt),
        "--pred",
        p(&pred),
        "--json",
        "--out",
        p(&out),
    ]));
    let row = &r["sequences"][0];
    assert!((row["MOTA"].as_f64().unwrap() - 0.6667).abs() < 1e-4);
    for field in [
        "IDF1", "IDs", "IDP", "IDR", "MT", "PT", "ML", "Rcll", "Prcn", "MOTA", "FP", "FN",
    ] {
        assert!(row.get(field).is_some(), "missing {field}");
        assert!(r["combined"].get(field).is_some());
    }
    assert!(std::fs::read_to_string(&out).unwrap().contains("66.67"));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("report.txt.manifest.json").exists());

    // predictions stop after frame 5 of 10: every later gt box is a miss
    let long: Vec<_> = (1..=10).map(|f| rec(f, 1, 0.0)).collect();
    let short: Vec<_> = (1..=5).map(|f| rec(f, 4, 0.0)).collect();
    write(&gt, &long);
    write(&pred, &short);
    let r = json(&ok(&["evaluate", "--gt", p(&gt), "--pred", p(&pred), "--json"]));
    assert_eq!(r["sequences"][0]["FN"], 5);
    assert_eq!(r["sequences"][0]["Rcll"], 0.5);
}

#[test]
fn evaluate_directories_combine_by_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (gts, preds) = (dir.path().join("gt"), dir.path().join("pred"));
    std::fs::create_dir_all(&gts).unwrap();
    std::fs::create_dir_all(&preds).unwrap();
    write(&gts.join("a.txt"), &(1..=4).map(|f| rec(f, 1, 0.0)).collect::<Vec<_>>());
    write(
        &preds.join("a.txt"),
        &(1..=4).map(|f| rec(f, 1, 0.0)).collect::<Vec<_>>(),
    );
    write(&gts.join("b.txt"), &(1..=2).map(|f| rec(f, 1, 0.0)).collect::<Vec<_>>());
    let r = json(&ok(&[
        "evaluate",
        "--jobs",
        "2",
        "--gt",
        p(&gts),
        "--pred",
        p(&preds),
        "--json",
    ]));
    assert_eq!(r["sequences"][0]["name"], "a");
    assert_eq!(r["sequences"][1]["FN"], 2);
    assert!((r["combined"]["Rcll"].as_f64().unwrap() - 4.0 / 6.0).abs() < 1e-12);
    let table = ok(&["evaluate", "--gt", p(&gts), "--pred", p(&preds)]);
    assert!(table.contains("COMBINED"));
}

#[test]
fn stats_command() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.txt");
    for (boxes, frames, density) in [(61_884u32, 1_452u32, "42.62"), (166_000, 5_083, "32.66")] {
        let records: Vec<_> = (0..boxes).map(|i| rec(i % frames + 1, i / frames + 1, 0.0)).collect();
        write(&ann, &records);
        let text = ok(&["stats", "--ann", p(&ann), "--frames", &frames.to_string()]);
        assert!(text.contains(&format!("density  {density}")), "{text}");
    }

    // square boxes: all mass in [0.8, 1.4]
    write(&ann, &(1..=20).map(|f| rec(f, 1, 0.0)).collect::<Vec<_>>());
    let r = json(&ok(&["stats", "--ann", p(&ann), "--json"]));
    assert_eq!(r["ratio_mass_0_8_to_1_4"], 1.0);
    assert_eq!(r["boxes"], 20);
    assert!(ok(&["stats", "--ann", p(&ann)]).contains("100.00%"));

    std::fs::write(&ann, "").unwrap();
    assert_eq!(code(&["stats", "--ann", p(&ann)]), 2);
    assert_eq!(code(&["stats", "--ann", p(&dir.path().join("missing.txt"))]), 2);
}

#[test]
fn resample_command() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, out, meta) = (
        dir.path().join("a.txt"),
        dir.path().join("half.txt"),
        dir.path().join("a.toml"),
    );
    write(&ann, &(1..=10).map(|f| rec(f, 1, f as f64)).collect::<Vec<_>>());
    std::fs::write(
        &meta,
        "name = \"a\"\nfps = 50.0\nframes = 10\nwidth = 640\nheight = 480\nview = \"slope\"\n",
    )
    .unwrap();
    ok(&[
        "resample",
        "--ann",
        p(&ann),
        "--factor",
        "2",
        "--out",
        p(&out),
        "--meta",
        p(&meta),
    ]);
    let r = read_annotation_file(&out, FieldOrder::IdFirst).unwrap();
    assert_eq!(r.iter().map(|r| r.frame).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
    let half_meta = std::fs::read_to_string(dir.path().join("half.toml")).unwrap();
    assert!(
        half_meta.contains("frames = 5") && half_meta.contains("fps = 25.0"),
        "{half_meta}"
    );
    assert!(dir.path().join("half.txt.manifest.json").exists());
}

#[test]
fn ap_command() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt.txt"), dir.path().join("pred.txt"));
    write(&gt, &[rec(1, 1, 0.0), rec(1, 2, 50.0)]);
    let mut far = rec(1, 2, 200.0);
    far.confidence = 0.9;
    let text = write_annotations(&[rec(1, 1, 0.0), far], FieldOrder::IdFirst);
    std::fs::write(&pred, text).unwrap();
    let r = json(&ok(&["ap", "--gt", p(&gt), "--pred", p(&pred), "--json"]));
    let ap = r["ap"].as_f64().unwrap();
    assert!(ap > 0.0 && ap < 1.0, "{ap}");
    assert!(ok(&["ap", "--gt", p(&gt), "--pred", p(&gt)]).contains("1.00"));
}

fn gray(w: usize, h: usize, seed: u32) -> ImageFrame {
    ImageFrame::from_fn(w, h, |x, y| {
        ((x as u32 * 37 + y as u32 * 91 + seed * 13) % 256) as f32 / 255.0
    })
    .unwrap()
}

#[test]
fn gen_motion_on_identical_frames_gives_zero_motion() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    for i in 0..3 {
        write_png_frame(frames.join(format!("f{i:03}.png")), &gray(24, 20, 0)).unwrap();
    }
    let out = dir.path().join("stacks");
    ok(&["gen-motion", "--frames-dir", p(&frames), "--out-dir", p(&out)]);
    for i in 1..=3 {
        let stack = SourceStack::read_dir(out.join(format!("{i:06}"))).unwrap();
        assert_eq!(stack.dims(), (24, 20));
        assert!(stack.diff().data().iter().all(|&v| v == 0.0));
        assert!(stack.flow().u().iter().chain(stack.flow().v()).all(|&v| v == 0.0));
    }
    assert!(out.join("manifest.json").exists());
    assert_eq!(
        code(&[
            "gen-motion",
            "--frames-dir",
            p(&dir.path().join("none")),
            "--out-dir",
            p(&out)
        ]),
        2
    );
}

#[test]
fn gen_motion_renders_density_from_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    for i in 0..2 {
        write_png_frame(frames.join(format!("{i}.png")), &gray(40, 30, i)).unwrap();
    }
    let ann = dir.path().join("ann.txt");
    write(&ann, &[rec(2, 1, 5.0), rec(2, 2, 20.0)]);
    let out = dir.path().join("stacks");
    ok(&[
        "gen-motion",
        "--frames-dir",
        p(&frames),
        "--out-dir",
        p(&out),
        "--ann",
        p(&ann),
        "--depth",
        "constant",
    ]);
    let first = SourceStack::read_dir(out.join("000001")).unwrap();
    let second = SourceStack::read_dir(out.join("000002")).unwrap();
    assert_eq!(first.density().total(), 0.0);
    assert!((second.density().total() - 2.0).abs() < 2e-3);
    assert!(second.diff().total() > 0.0);
}

#[test]
fn fuse_demo_identity_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    for i in 0..2 {
        write_png_frame(frames.join(format!("{i}.png")), &gray(10, 8, i)).unwrap();
    }
    let stacks = dir.path().join("stacks");
    ok(&[
        "gen-motion",
        "--frames-dir",
        p(&frames),
        "--out-dir",
        p(&stacks),
        "--block-size",
        "3",
        "--pyramid-levels",
        "1",
    ]);
    let stack_dir = stacks.join("000002");
    let (out, params) = (dir.path().join("fused"), dir.path().join("params"));
    let summary = json(&ok(&[
        "fuse-demo",
        "--stack-dir",
        p(&stack_dir),
        "--seed",
        "5",
        "--alpha1",
        "0",
        "--alpha2",
        "0",
        "--save-params",
        p(&params),
        "--out",
        p(&out),
        "--json",
    ]));
    assert_eq!(summary["alpha1"], 0.0);
    assert_eq!(summary["beta2"], 1.0);

    // expected: h_agg is the projected static branch of the unmasked concat
    let stack = SourceStack::read_dir(&stack_dir).unwrap();
    let loaded = FusionParams::load(&params).unwrap();
    let trace = ForwardTrace::run(&stack, &loaded).unwrap();
    let (m, s) = split_regroup(trace.value(trace.h_cat), &loaded).unwrap();
    let (_, ps) = project_branches(&m, &s, &loaded).unwrap();
    let (w, h, c, data) = read_raw_map(out.join("h_agg.bin")).unwrap();
    assert_eq!((c, h, w), (8, 8, 10));
    let expected: Vec<f32> = ps.data().iter().map(|&v| v as f32).collect();
    assert_eq!(data, expected);

    // same seed, same bytes
    let again = dir.path().join("again");
    ok(&[
        "fuse-demo",
        "--stack-dir",
        p(&stack_dir),
        "--seed",
        "5",
        "--alpha1",
        "0",
        "--alpha2",
        "0",
        "--out",
        p(&again),
    ]);
    assert_eq!(
        std::fs::read(out.join("h_agg.bin")).unwrap(),
        std::fs::read(again.join("h_agg.bin")).unwrap()
    );
    assert_eq!(
        code(&[
            "fuse-demo",
            "--stack-dir",
            p(&dir.path().join("nope")),
            "--out",
            p(&again)
        ]),
        2
    );
}

#[test]
fn standard_field_order_round_trips_through_track() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("d.txt");
    let records: Vec<_> = (1..=5).map(|f| rec(f, 1, f as f64)).collect();
    std::fs::write(&dets, write_annotations(&records, FieldOrder::Standard)).unwrap();
    let out = dir.path().join("t.txt");
    ok(&["track", "--dets", p(&dets), "--order", "standard", "--out", p(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let t = parse_annotations(&text, FieldOrder::Standard).unwrap();
    assert_eq!(t.len(), 5);
    assert!(text.starts_with("1,1,"));
}
