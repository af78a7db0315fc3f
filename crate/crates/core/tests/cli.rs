use std::path::Path;
use std::process::{Command, Output};

use ksae::analysis::parse_manifest;
use ksae::store::{read_shard, write_shard, ActivationShard, ShardMeta, ShardRow};

fn ksae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn info_reports_spatial_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut meta = ShardMeta::new(1280);
    meta.spatial_shape = Some((32, 32));
    meta.layer_id = "up_ft1".into();
    meta.timestep = 25;
    let mut shard = ActivationShard::new(meta);
    shard.push(ShardRow {
        sample_id: "img0".into(),
        label: 0,
        values: vec![0.5; 1280 * 32 * 32],
    });
    let path = dir.path().join("up_ft1.acts");
    write_shard(&shard, &path).unwrap();
    let out = ksae(&["info", p(&path)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("d=1280, spatial 32×32"), "{text}");
    assert!(text.contains("layer_id=up_ft1 timestep=25"), "{text}");
}

#[test]
fn pure_synthetic_pipeline_has_zero_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t, q) = (dir.path().join("s"), dir.path().join("t"), dir.path().join("q"));
    let data = s.join("synth.acts");
    assert!(ksae(&[
        "synth", "--out", p(&s), "--seed", "3", "--d", "16", "--n_true", "32", "--k_true", "1", "--rows", "3000",
        "--noise_sigma", "0"
    ])
    .status
    .success());
    assert!(ksae(&[
        "train", "--out", p(&t), "--data", p(&data), "--k", "1", "--expansion_factor", "4", "--max_steps", "1500",
        "--batch_size", "64", "--warmup_steps", "100", "--lr", "0.003", "--log_every", "0"
    ])
    .status
    .success());
    let out = ksae(&["purity", "--out", p(&q), "--checkpoint", p(&t.join("checkpoint.ksae")), "--data", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("sigma_label 0\n"), "{}", stdout(&out));
    let resolved = std::fs::read_to_string(q.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("top_latents=1000") && resolved.contains("m=10"));

    // tops -> manifest -> purity from the manifest agrees
    let tops = dir.path().join("tops");
    assert!(ksae(&["tops", "--out", p(&tops), "--checkpoint", p(&t.join("checkpoint.ksae")), "--data", p(&data)])
        .status
        .success());
    let manifest = parse_manifest(&std::fs::read_to_string(tops.join("tops.txt")).unwrap()).unwrap();
    assert_eq!(manifest.profiles.len(), 64);
    assert_eq!(manifest.label_names.len(), 32);
    let again = ksae(&["purity", "--profiles", p(&tops.join("tops.txt"))]);
    assert_eq!(stdout(&again), stdout(&out));

    let gal = dir.path().join("gallery");
    let g = ksae(&["gallery", "--out", p(&gal), "--profiles", p(&tops.join("tops.txt")), "--top_latents", "5", "--m", "4"]);
    assert!(g.status.success());
    let m = parse_manifest(&std::fs::read_to_string(gal.join("manifest.txt")).unwrap()).unwrap();
    assert_eq!(m.profiles.len(), 5);
    assert!(m.profiles.iter().all(|l| l.top_samples.len() == 4));
    assert!(m.profiles.windows(2).all(|w| w[0].peak_activation >= w[1].peak_activation));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# training settings\nmax_steps=7\nk=2\nexpansion_factor=2\nbatch_size=16\nlr=0.01\n").unwrap();
    assert!(ksae(&["synth", "--out", p(&s), "--rows", "200", "--d", "8", "--n_true", "8", "--k_true", "2"])
        .status
        .success());
    let t = dir.path().join("t");
    let out = ksae(&[
        "train", "--config", p(&cfg), "--out", p(&t), "--data", p(&s.join("synth.acts")), "--max_steps", "5", "--seed",
        "9"
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = std::fs::read_to_string(t.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("max_steps=5\n"));
    assert!(resolved.contains("\nk=2\n"));
    assert!(resolved.contains("seed=9\n"));
    assert!(resolved.contains("batch_size=16\n"));
    let log = std::fs::read_to_string(t.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 6);

    std::fs::write(&cfg, "max_stepz=7\n").unwrap();
    let bad = ksae(&["train", "--config", p(&cfg), "--out", p(&t), "--data", p(&s.join("synth.acts"))]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ksae(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ksae(&[]).status.code(), Some(2));
    let junk = dir.path().join("junk.acts");
    std::fs::write(&junk, b"not a shard at all").unwrap();
    assert_eq!(ksae(&["info", p(&junk)]).status.code(), Some(2));
    let missing = dir.path().join("missing.acts");
    assert_eq!(ksae(&["info", p(&missing)]).status.code(), Some(1));
    assert_eq!(ksae(&["bench", "--d", "4", "--n", "8", "--k", "9", "--steps", "1"]).status.code(), Some(2));
}

#[test]
fn convert_packs_raw_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("dump.f32");
    let (d, h, w, rows) = (3usize, 2usize, 2usize, 4usize);
    let values: Vec<f32> = (0..rows * d * h * w).map(|i| i as f32 * 0.25 - 3.0).collect();
    std::fs::write(&raw, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
    let ids = dir.path().join("ids.txt");
    std::fs::write(&ids, "a\nb\nc\nd\n").unwrap();
    let labels = dir.path().join("labels.txt");
    std::fs::write(&labels, "0\n1\n1\n0\n").unwrap();
    let names = dir.path().join("names.txt");
    std::fs::write(&names, "cat\ndog\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = ksae(&[
        "convert", "--out", p(&out_dir), "--input", p(&raw), "--d", "3", "--spatial_shape", "2x2", "--ids", p(&ids),
        "--labels", p(&labels), "--label_names", p(&names), "--layer_id", "bottleneck", "--timestep", "100",
        "--prompt_mode", "from_clip",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let shard = read_shard(out_dir.join("dump.acts")).unwrap();
    assert_eq!(shard.meta.spatial_shape, Some((2, 2)));
    assert_eq!(shard.meta.label_names, vec!["cat", "dog"]);
    assert_eq!(shard.rows[2].sample_id, "c");
    assert_eq!(shard.rows[2].label, 1);
    assert_eq!(shard.rows[3].values, values[36..48].to_vec());
    assert_eq!(
        std::fs::read_to_string(out_dir.join("dump.labels.txt")).unwrap(),
        "cat\ndog\n"
    );

    std::fs::write(&raw, [0u8; 10]).unwrap();
    assert_eq!(ksae(&["convert", "--out", p(&out_dir), "--input", p(&raw), "--d", "3"]).status.code(), Some(2));

    let pca_out = dir.path().join("pca");
    std::fs::write(&raw, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
    let pca = ksae(&["pca", "--out", p(&pca_out), "--data", p(&out_dir.join("dump.acts"))]);
    assert!(pca.status.success(), "{}", String::from_utf8_lossy(&pca.stderr));
    assert!(pca_out.join("maps/00000_a.pfm").is_file());
    assert!(pca_out.join("maps/00003_d.png").is_file());
    assert!(std::fs::read_to_string(pca_out.join("pca.txt")).unwrap().contains("points=16"));
}

#[test]
fn bench_repeats_within_tolerance() {
    let run = || -> f64 {
        let o = ksae(&[
            "bench", "--d", "64", "--n", "2048", "--k", "16", "--batch_size", "64", "--steps", "40", "--warmup", "5",
        ]);
        assert!(o.status.success());
        let text = stdout(&o);
        let rows = text.split(", ").find(|s| s.ends_with("rows/s")).unwrap();
        rows.trim_end_matches(" rows/s").parse().unwrap()
    };
    let (a, b) = (run(), run());
    let ratio = a.max(b) / a.min(b);
    assert!(ratio < 1.2, "{a} vs {b}");
}
