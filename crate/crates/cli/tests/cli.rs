use std::path::Path;
use std::process::{Command, Output};

fn ladder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ladder")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ladder(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_evaluate_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "synth", "--out-dir", s(d), "--n-labeled", "80", "--n-unlabeled", "160", "--n-dev", "30", "--n-test", "40",
        "--dim", "10", "--latent-k", "3",
    ]);
    let cfg = d.join("run.cfg");
    assert!(std::fs::read_to_string(&cfg).unwrap().contains("unlabeled = "));

    let common = ["--set", "hidden=12,8", "--set", "epochs=3", "--set", "batch_size=16", "--set", "lr=0.005"];
    let mut reports = Vec::new();
    for variant in ["STL", "Lad+UL+STL"] {
        let ck = d.join(format!("{variant}.ckpt"));
        let log = d.join(format!("{variant}.log.csv"));
        let mut args = vec!["train", "--config", s(&cfg), "--set"];
        let v = format!("variant={variant}");
        args.push(&v);
        args.extend(common);
        args.extend(["--out", s(&ck), "--log", s(&log)]);
        let text = ok(&args);
        assert!(text.contains("best dev arousal CCC"));
        assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 5);

        let report = d.join(format!("{variant}.csv"));
        let text = ok(&[
            "evaluate", "--checkpoint", s(&ck), "--features", s(&d.join("features.bin")), "--labels",
            s(&d.join("labels.csv")), "--split", "test", "--folds", "4", "--out", s(&report),
        ]);
        assert!(text.contains("n = 40"));
        reports.push(report);
    }

    let text = ok(&["compare", s(&reports[1]), s(&reports[0]), "--test", "fisher", "--out", s(&d.join("cmp.csv"))]);
    assert!(text.contains("arousal"));
    ok(&["compare", s(&reports[1]), s(&reports[0]), "--test", "paired_t"]);
    let same = ok(&["compare", s(&reports[0]), s(&reports[0]), "--test", "paired_t"]);
    assert!(same.contains("degenerate"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let out = ladder(&["evaluate", "--checkpoint", s(&missing), "--features", "f.csv", "--labels", "l.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = ladder(&["train", "--set", "variant=Lad+UL+STL", "--set", "features=f.csv", "--set", "labels=l.csv", "--out", "x"]);
    assert!(!out.status.success());

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"LSERCKPT\x01\x00\x00\x00").unwrap();
    let out = ladder(&["evaluate", "--checkpoint", s(&bad), "--features", "f.csv", "--labels", "l.csv"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
}
