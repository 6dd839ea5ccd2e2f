use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adssm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adssm")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_lists_file_formats() {
    let dir = tempfile::tempdir().unwrap();
    let o = adssm(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for needle in ["t_sec,value", "record_id,subject,label,ppg_path,ecg_path", "beat_index,r_time_s,systolic_time_s", "Exit codes"] {
        assert!(text.contains(needle), "help is missing {needle:?}");
    }
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["synth"][..], &["gradcheck", "--seed", "abc"][..], &["evaluate", "--pred", "a.csv"][..]] {
        let o = adssm(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert_eq!(stderr(&o).lines().count(), 1, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error kind=usage code=2"));
    }
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = adssm(&["translate", "--ppg", "nope.csv", "--checkpoint", "nope.ckpt", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn malformed_csv_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "t_sec,value\n0.0,1.0\n0.008,oops\n").unwrap();
    let o = adssm(&["noise", "--in", "bad.csv", "--out", "n.csv"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    fs::write(dir.path().join("m.csv"), "a,b\n1,2\n").unwrap();
    let o = adssm(&["evaluate", "--records", "m.csv"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_2_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "epochs = 10\nlearning_rate = 0.1\n").unwrap();
    let o = adssm(&["--config", "run.cfg", "gradcheck"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 2") && e.contains("learning_rate") && e.contains("anneal_end_epoch"), "{e}");
}

#[test]
fn resolved_config_is_logged_with_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "seed = 3\nlr = 0.002\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_adssm"))
        .args(["--config", "run.cfg", "--seed", "11", "--set", "threads=2", "gradcheck"])
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("seed=11 lr=0.002") && log.contains("threads=2"), "{log}");
}

#[test]
fn synth_writes_records_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = adssm(&["synth", "--subjects", "4", "--afib", "1", "--duration", "10", "--out", "syn"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let syn = dir.path().join("syn");
    let manifest = fs::read_to_string(syn.join("manifest.csv")).unwrap();
    let rows: Vec<_> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.contains(",afib,")).count(), 1);
    for i in 0..4 {
        for kind in ["ppg", "ecg", "peaks"] {
            assert!(syn.join(format!("subject{i:02}_{kind}.csv")).exists());
        }
    }
    let ppg = fs::read_to_string(syn.join("subject00_ppg.csv")).unwrap();
    assert_eq!(ppg.lines().next(), Some("t_sec,value"));
    assert_eq!(ppg.lines().count(), 1 + 1250);

    let again = tempfile::tempdir().unwrap();
    adssm(&["synth", "--subjects", "4", "--afib", "1", "--duration", "10", "--out", "syn"], again.path());
    assert_eq!(ppg, fs::read_to_string(again.path().join("syn/subject00_ppg.csv")).unwrap());
}

#[test]
fn evaluate_identical_files_gives_zero_rmse() {
    let dir = tempfile::tempdir().unwrap();
    adssm(&["synth", "--subjects", "1", "--duration", "12", "--out", "syn"], dir.path());
    let o = adssm(
        &["evaluate", "--pred", "syn/subject00_ecg.csv", "--ref", "syn/subject00_ecg.csv", "--out", "m.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let data: Vec<_> = rows.lines().skip(1).collect();
    assert_eq!(data.len(), 3);
    for row in data {
        let f: Vec<_> = row.split(',').collect();
        assert_eq!(f[4].parse::<f64>().unwrap(), 0.0);
        assert!((f[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    }
    let again = adssm(&["evaluate", "--records", "m.csv"], dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert!(stdout(&again).contains("healthy"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = adssm(&["gradcheck", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("max_rel_error"));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |o: Output| assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    ok(adssm(&["synth", "--subjects", "2", "--duration", "20", "--out", "syn"], d));
    ok(adssm(&["preprocess", "--manifest", "syn/manifest.csv", "--out", "data.json", "--set", "train_seconds=12", "--set", "val_seconds=4"], d));
    let small = ["--set", "hidden=16", "--set", "latent=4", "--set", "attn_hidden=8", "--set", "checkpoint_every=2"];
    let mut args = vec!["train", "--data", "data.json", "--out", "run", "--epochs", "4"];
    args.extend(small);
    ok(adssm(&args, d));
    let log = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,beta,train_loss,val_loss,wall_clock_s"));
    assert_eq!(log.lines().count(), 5);

    let mut resume = vec!["train", "--data", "data.json", "--out", "run2", "--epochs", "6", "--resume", "run/latest.ckpt"];
    resume.extend(small);
    ok(adssm(&resume, d));
    assert_eq!(fs::read_to_string(d.join("run2/metrics.csv")).unwrap().lines().count(), 3);

    ok(adssm(
        &["translate", "--ppg", "syn/subject00_ppg.csv", "--checkpoint", "run/best.ckpt", "--out", "tr", "--ref", "syn/subject00_ecg.csv", "--mode", "sample", "--draws", "20"],
        d,
    ));
    for f in ["ecg_translated.csv", "segments.csv", "band_lower.csv", "band_upper.csv", "reference_aligned.csv", "metrics.csv"] {
        assert!(d.join("tr").join(f).exists(), "missing {f}");
    }
    let n = |f: &str| fs::read_to_string(d.join("tr").join(f)).unwrap().lines().count();
    assert_eq!(n("ecg_translated.csv"), n("reference_aligned.csv"));
    assert_eq!(n("ecg_translated.csv"), n("band_lower.csv"));

    ok(adssm(&["evaluate", "--pred", "tr/ecg_translated.csv", "--ref", "tr/reference_aligned.csv"], d));
}
