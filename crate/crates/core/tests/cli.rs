use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graft::io::state_doc::StateDocument;
use serde_json::Value;

fn graft(args: &[&str]) -> Output {
    graft_env(args, &[])
}

fn graft_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_graft"));
    c.args(args).env_remove("GRAFT_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("s{seed}"));
    ok(&graft(&["synth", "--seed", seed, "--out", p(&out)]));
    out
}

#[test]
fn synth_writes_the_scenario_files_deterministically() {
    let d = tempfile::tempdir().unwrap();
    let a = synth(d.path(), "7");
    let b = d.path().join("again");
    ok(&graft(&["synth", "--seed", "7", "--out", p(&b)]));
    for f in ["scene.ply", "model.grft", "gt.json", "init.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = synth(d.path(), "8");
    assert_eq!(std::fs::read(a.join("gt.json")).unwrap(), std::fs::read(c.join("gt.json")).unwrap());
    assert_ne!(std::fs::read(a.join("init.json")).unwrap(), std::fs::read(c.join("init.json")).unwrap());
}

#[test]
fn refine_with_zero_iterations_returns_the_init() {
    let d = tempfile::tempdir().unwrap();
    let s = synth(d.path(), "1");
    let out = d.path().join("r");
    ok(&graft(&[
        "refine", "--model", p(&s.join("model.grft")), "--scene", p(&s.join("scene.ply")),
        "--init", p(&s.join("init.json")), "--gt", p(&s.join("gt.json")), "--iters", "0", "--out", p(&out),
    ]));
    assert_eq!(std::fs::read(out.join("refined.json")).unwrap(), std::fs::read(s.join("init.json")).unwrap());
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,human,mean_probe_dist_mm,scale,f1_vs_gt,wall_ms"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn refine_with_trained_style_weights_writes_a_trajectory() {
    let d = tempfile::tempdir().unwrap();
    let s = synth(d.path(), "2");
    let w = d.path().join("w.grft");
    ok(&graft(&["init-weights", "--seed", "5", "--zero-heads", "--out", p(&w)]));
    let out = d.path().join("r");
    ok(&graft(&[
        "refine", "--model", p(&s.join("model.grft")), "--scene", p(&s.join("scene.ply")),
        "--init", p(&s.join("init.json")), "--weights", p(&w), "--iters", "2", "--max-points", "4000",
        "--out", p(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("step,human,mean_probe_dist_mm,scale,wall_ms\n"));
    assert_eq!(csv.lines().count(), 4);
    // Zero heads predict no update.
    let refined = StateDocument::read(out.join("refined.json")).unwrap().states().unwrap();
    let init = StateDocument::read(s.join("init.json")).unwrap().states().unwrap();
    assert_eq!(refined, init);
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    let s = synth(d.path(), "3");
    let csv = d.path().join("rows.csv");
    let text = ok(&graft(&[
        "eval", "--model", p(&s.join("model.grft")), "--scene", p(&s.join("scene.ply")),
        "--pred", p(&s.join("gt.json")), "--gt", p(&s.join("gt.json")), "--csv", p(&csv),
    ]));
    let v: Value = serde_json::from_str(&text).unwrap();
    let r = &v[0];
    assert_eq!(r["f1"], 1.0);
    assert_eq!(r["v2s_mm"], 0.0);
    assert_eq!(r["d2s_deg"], 0.0);
    assert_eq!(r["contact_tau_m"], 0.05);
    assert!(r["pa_mpjpe_mm"].as_f64().unwrap() < 1e-9);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let noisy = ok(&graft(&[
        "eval", "--model", p(&s.join("model.grft")), "--scene", p(&s.join("scene.ply")),
        "--pred", p(&s.join("init.json")), "--gt", p(&s.join("gt.json")), "--contact-tau", "0.1",
        "--shared-scene",
    ]));
    let v: Value = serde_json::from_str(&noisy).unwrap();
    assert!(v[0]["v2s_mm"].as_f64().unwrap() > 0.0);
    assert_eq!(v[0]["contact_tau_m"], 0.1);
}

#[test]
fn probe_dump_lists_every_token_group() {
    let d = tempfile::tempdir().unwrap();
    let s = synth(d.path(), "4");
    let text = ok(&graft(&[
        "probe-dump", "--model", p(&s.join("model.grft")), "--scene", p(&s.join("scene.ply")),
        "--state", p(&s.join("gt.json")),
    ]));
    let v: Value = serde_json::from_str(&text).unwrap();
    let h = &v[0];
    assert_eq!(h["body"].as_array().unwrap().len(), 21);
    assert_eq!(h["left_hand"].as_array().unwrap().len(), 5);
    assert_eq!(h["right_hand"].as_array().unwrap().len(), 5);
    assert_eq!(h["surface"].as_array().unwrap().len(), 27);
    let rec = &h["body"][0];
    for key in ["anchor", "nearest", "offset", "normal", "body_relative", "distance", "point_id"] {
        assert!(!rec[key].is_null(), "{key}");
    }
}

#[test]
fn init_weights_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    let path = |n: &str| d.path().join(n);
    for (name, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        ok(&graft(&["init-weights", "--seed", seed, "--out", p(&path(name))]));
    }
    let read = |n: &str| std::fs::read(path(n)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(&read("a")[..4], b"GRFT");
}

#[test]
fn train_micro_and_curve_emit_csv() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path().join("w.grft");
    let curve = d.path().join("loss.csv");
    let text = ok(&graft_env(
        &["train-micro", "--iters", "3", "--batch", "2", "--seed", "1", "--out", p(&w), "--curve", p(&curve)],
        &[("GRAFT_THREADS", "1")],
    ));
    let summary: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(summary["iterations"], 3);
    let rows = std::fs::read_to_string(&curve).unwrap();
    assert!(rows.starts_with("iteration,lr,rollout_steps,loss,wall_ms\n"));
    assert_eq!(rows.lines().count(), 4);

    let out = ok(&graft(&["curve", "--iters", "2", "--weights", p(&w)]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "iteration,f1,wall_ms");
    assert_eq!(lines.len(), 4);
    let again = ok(&graft(&["curve", "--iters", "2", "--weights", p(&w)]));
    let f1 = |s: &str| s.lines().map(|l| l.split(',').nth(1).unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(f1(&out), f1(&again));

    let trained = ok(&graft(&["curve", "--train", "2", "--every", "1"]));
    assert_eq!(trained.lines().next(), Some("iteration,train_loss,f1,wall_ms"));
    assert_eq!(trained.lines().count(), 4);
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["refine"][..], &["bogus"], &["synth", "--seed", "x"], &["eval", "--nope"]] {
        let o = graft(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(graft(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one_and_json() {
    type Case<'a> = (Vec<String>, Vec<(&'a str, &'a str)>, &'a str);
    let d = tempfile::tempdir().unwrap();
    let s = synth(d.path(), "5");
    let cases: Vec<Case> = vec![
        (
            vec!["eval".into(), "--model".into(), "missing.grft".into(), "--scene".into(), "x".into(), "--pred".into(), "y".into(), "--gt".into(), "z".into()],
            vec![],
            "Io",
        ),
        (
            vec!["probe-dump".into(), "--model".into(), p(&s.join("gt.json")).into(), "--scene".into(), p(&s.join("scene.ply")).into(), "--state".into(), p(&s.join("gt.json")).into()],
            vec![],
            "Container",
        ),
        (
            vec!["train-micro".into(), "--task".into(), "juggling".into(), "--out".into(), p(&d.path().join("w")).into()],
            vec![],
            "InvalidArgument",
        ),
        (
            vec!["eval".into(), "--model".into(), p(&s.join("model.grft")).into(), "--scene".into(), p(&s.join("scene.ply")).into(), "--pred".into(), p(&s.join("gt.json")).into(), "--gt".into(), p(&s.join("gt.json")).into(), "--contact-tau".into(), "0".into()],
            vec![],
            "InvalidArgument",
        ),
        (vec!["init-weights".into(), "--out".into(), p(&d.path().join("w2")).into()], vec![("GRAFT_THREADS", "zero")], "InvalidArgument"),
    ];
    for (args, env, kind) in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = graft_env(&refs, &env);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err: Value = serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&o.stderr)));
        assert_eq!(err["error"], kind, "{args:?}");
        assert!(err["message"].is_string());
    }
}
