use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

fn beatssl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beatssl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BEATSSL_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn first_line(s: &str) -> PathBuf {
    PathBuf::from(s.lines().next().unwrap().trim())
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&beatssl(&["selftest"], dir.path()));
    assert!(stdout.lines().count() >= 5);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn pretrain_probe_segment_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let ck = first_line(&ok(&beatssl(&["--config", SMOKE, "--seed", "3", "pretrain"], out)));
    assert!(ck.exists());
    let run = ck.parent().unwrap().file_name().unwrap().to_string_lossy().to_string();
    assert!(run.ends_with("_s3"), "{run}");

    let ck_arg = ck.to_str().unwrap();
    let probe = first_line(&ok(&beatssl(&["--config", SMOKE, "probe", "--checkpoint", ck_arg], out)));
    let seg = first_line(&ok(&beatssl(&["--config", SMOKE, "segment", "--checkpoint", ck_arg], out)));
    let header = "task,config_hash,run,fold,metric,class,value";
    for table in [&probe, &seg] {
        let text = fs::read_to_string(table).unwrap();
        assert_eq!(text.lines().next().unwrap(), header);
        let hash = run.split('_').next().unwrap();
        assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some(hash)));
    }

    let manifest = fs::read_to_string(out.join("run_manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);

    let rep_dir = out.join("report");
    let stdout = ok(&beatssl(&["report", out.to_str().unwrap()], &rep_dir));
    assert!(stdout.contains("soft_1-hard-50"), "{stdout}");
    assert!(rep_dir.join("summary.md").exists());
    assert!(rep_dir.join("plots/probe_auroc.svg").exists());
}

#[test]
fn ablate_subset_and_strict_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = beatssl(&["--config", SMOKE, "ablate", "--rows", "hard,-,50"], out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not one of the 14"));

    let stdout = ok(&beatssl(&["--config", SMOKE, "ablate", "--rows", "hard,-,1;soft_2,hard,1"], out));
    let dirs: Vec<PathBuf> = stdout.lines().map(PathBuf::from).collect();
    assert_eq!(dirs.len(), 2);
    for d in &dirs {
        assert!(d.join("checkpoint.bssl").exists() && d.join("scores.csv").exists());
    }
    let rep = ok(&beatssl(&["report", out.to_str().unwrap()], &out.join("rep")));
    assert!(rep.lines().any(|l| l.contains("hard-none-1") && l.contains("baseline")), "{rep}");

    let free = ok(&beatssl(&["--config", SMOKE, "--no-strict", "ablate", "--rows", "hard,-,50"], &out.join("free")));
    assert_eq!(free.lines().count(), 1);
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochz = 2\n").unwrap();
    let o = beatssl(&["--config", cfg.to_str().unwrap(), "pretrain"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
}

#[test]
fn convert_then_train_on_converted_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = first_line(&ok(&beatssl(&["--config", SMOKE, "convert", "--from", "synthetic"], &data)));
    assert!(manifest.ends_with("manifest.tsv"));
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 30);

    let ck = first_line(&ok(&beatssl(
        &["--config", SMOKE, "--data", data.to_str().unwrap(), "pretrain"],
        &dir.path().join("out"),
    )));
    assert!(ck.exists());

    let env_run = Command::new(env!("CARGO_BIN_EXE_beatssl"))
        .args(["--config", SMOKE, "--out"])
        .arg(dir.path().join("env"))
        .arg("pretrain")
        .env("BEATSSL_DATA_ROOT", dir.path().join("missing"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(!env_run.status.success(), "data root from the environment is honoured");
}

#[test]
fn convert_csv_dir() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir_all(&src).unwrap();
    fs::write(src.join("records.csv"), "record_id,fold,sampling_rate,labels\nr1,9,500,regular\n").unwrap();
    let header = (1..=12).map(|i| format!("L{i}")).collect::<Vec<_>>().join(",");
    let row = ["0.1"; 12].join(",");
    fs::write(src.join("r1.csv"), format!("{header}\n{row}\n{row}\n")).unwrap();
    let out = dir.path().join("out");
    let manifest = first_line(&ok(&beatssl(&["convert", "--from", "csv-dir", "--input", src.to_str().unwrap()], &out)));
    let text = fs::read_to_string(manifest).unwrap();
    assert!(text.starts_with("r1\t9\t12\t2\t500\tr1.f32"), "{text}");
}
