use std::fs;
use std::process::Command;

fn zubov() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zubov"));
    c.env_remove("ZUBOV_THREADS");
    c
}

#[test]
fn missing_subcommand_prints_usage_and_exits_2() {
    let out = zubov().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn gradcheck_prints_two_lines_below_threshold() {
    let out = zubov().args(["gradcheck", "--seed", "7"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.contains("max relative error")));
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "system = vdp\n\nlambda_d = -1\n").unwrap();
    let out = zubov().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:3"));
}

#[test]
fn invalid_thread_env_is_rejected() {
    let out = zubov()
        .env("ZUBOV_THREADS", "zero")
        .args(["gradcheck", "--input-cases", "1", "--param-cases", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_contour_diff_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("p.cfg");
    fs::write(
        &cfg,
        "system = product2\nm_b = 100\nm_r = 100\nm_d = 20\nwidth = 8\ndepth = 3\niterations = 2\nepochs = 5\nk_steps = 100\n",
    )
    .unwrap();
    let run = d.join("run");
    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(zubov()
        .env("ZUBOV_THREADS", "1")
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(&run));
    for f in ["model.ckpt", "checkpoint_001.ckpt", "checkpoint_002.ckpt", "history.csv", "metadata.txt", "iterations.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("iter,epoch,total,boundary,residual,data"));
    assert_eq!(history.lines().count(), 11);
    let meta = fs::read_to_string(run.join("metadata.txt")).unwrap();
    for key in zubov::config::KEYS {
        assert!(meta.contains(&format!("{key} = ")), "{key} not echoed");
    }

    let grid = d.join("g.csv");
    ok(zubov()
        .arg("eval")
        .arg("--config")
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(run.join("model.ckpt"))
        .args(["--resolution", "21", "--output"])
        .arg(&grid));
    assert_eq!(fs::read_to_string(&grid).unwrap().lines().count(), 21 * 21 + 1);

    let fdm = d.join("f.csv");
    ok(zubov()
        .args(["fdm", "--system", "product2", "--resolution", "21", "--output"])
        .arg(&fdm));
    let contour = d.join("c.csv");
    let msg = ok(zubov().arg("contour").arg("--grid").arg(&fdm).args(["--level", "0.9", "--output"]).arg(&contour));
    assert!(msg.contains("1 closed"));
    assert!(fs::read_to_string(&contour).unwrap().starts_with("# level 9"));

    let diff = ok(zubov().arg("diff").arg(&grid).arg(&fdm));
    assert!(diff.contains("sup |a-b|") && diff.contains("mean |a-b|"));
    let same = ok(zubov().arg("diff").arg(&fdm).arg(&fdm));
    assert!(same.contains("sup |a-b| = 0.000000e0"));
}
