use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_picard-mpe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(p: &Path) -> String {
    fs::read_to_string(p).unwrap().lines().next().unwrap().to_string()
}

const SMALL: [&str; 6] = ["--preset", "kuramoto1", "--set", "model.n=10", "--set", "grid.M=20"];

fn picard_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["picard"];
    args.extend(SMALL);
    args.extend(["--out", path(dir)]);
    args.extend(extra);
    run(&args)
}

#[test]
fn picard_writes_documented_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = picard_into(&out, &["--set", "picard.certify=true"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("values.csv")), "t,x,n_1,n_2,v");
    assert_eq!(header(&out.join("control.csv")), "t,x,n_1,n_2,a_1");
    assert_eq!(header(&out.join("convergence.csv")), "iter,residual");
    assert_eq!(header(&out.join("slice.csv")), "p,z");
    assert_eq!(header(&out.join("exploitability.csv")), "iter,epsilon");
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["converged"], true);
    assert!(s["exploitability"].as_f64().unwrap() <= 1e-5);
    // slice at t = 0 has N + 1 points
    assert_eq!(fs::read_to_string(out.join("slice.csv")).unwrap().lines().count(), 12);
}

#[test]
fn non_convergence_exits_zero_with_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let o = picard_into(tmp.path(), &["--set", "picard.max_iter=2"]);
    assert_eq!(code(&o), 0);
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["converged"], false);
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&picard_into(&a, &["--threads", "1"])), 0);
    assert_eq!(code(&picard_into(&b, &["--threads", "1"])), 0);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn simulation_output_ignores_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let ctrl = tmp.path().join("p");
    assert_eq!(code(&picard_into(&ctrl, &[])), 0);
    let control = ctrl.join("control.csv");
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("s{threads}"));
        let mut args = vec!["simulate"];
        args.extend(SMALL);
        args.extend([
            "--set",
            "mc.M=300",
            "--seed",
            "11",
            "--threads",
            threads,
            "--control",
            path(&control),
            "--out",
            path(&out),
        ]);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(dir_bytes(&out));
    }
    assert_eq!(outs[0], outs[1]);
    let dir = tmp.path().join("s1");
    assert_eq!(header(&dir.join("trajectories.csv")), "traj_id,event_time,actor,from,to");
    assert_eq!(header(&dir.join("costs.csv")), "traj_id,cost");
    assert_eq!(header(&dir.join("distribution.csv")), "t,mean_0,std_0,mean_1,std_1");
}

#[test]
fn rho_one_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&picard_into(tmp.path(), &["--rho", "1"])), 2);
    assert_eq!(code(&picard_into(tmp.path(), &["--set", "picard.rho=1"])), 2);
    assert_eq!(code(&picard_into(tmp.path(), &["--set", "neural.rho=1.5"])), 2);
}

#[test]
fn unknown_keys_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&picard_into(tmp.path(), &["--set", "picard.speed=3"])), 2);
    assert_eq!(code(&picard_into(tmp.path(), &["--set", "omega=3"])), 2);
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"model": {"preset": "kuramoto1"}, "extra": 1}"#).unwrap();
    let o = run(&["picard", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["picard", "--preset", "kuramoto9", "--out", path(tmp.path())])), 2);
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"model": {"preset": "kuramoto2", "n": 6, "params": {"kappa": 1.0}},
            "grid": {"T": 2.0, "M": 40}, "picard": {"tol": 1e-6}}"#,
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = run(&["picard", "--config", path(&cfg), "--set", "sigma2=0.8", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["model"]["n"], 6);
    assert_eq!(s["model"]["horizon"], 2.0);
    assert_eq!(s["intervals"], 40);
}

fn zero_control(src: &Path, dst: &Path) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let mut out = vec![lines.next().unwrap().to_string()];
    for l in lines {
        let mut cols: Vec<&str> = l.split(',').collect();
        *cols.last_mut().unwrap() = "0";
        out.push(cols.join(","));
    }
    fs::write(dst, out.join("\n") + "\n").unwrap();
}

#[test]
fn verify_zero_control_is_exploitable() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("p");
    assert_eq!(code(&picard_into(&p, &[])), 0);
    let zero = tmp.path().join("zero.csv");
    zero_control(&p.join("control.csv"), &zero);
    let mut args = vec!["verify"];
    args.extend(SMALL);
    args.extend(["--control", path(&zero), "--out", path(tmp.path())]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("certificate.json")).unwrap()).unwrap();
    assert!(cert["epsilon"].as_f64().unwrap() > 1e-2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("epsilon"));

    let converged = p.join("control.csv");
    let mut args = vec!["verify"];
    args.extend(SMALL);
    args.extend(["--control", path(&converged), "--out", path(tmp.path())]);
    assert_eq!(code(&run(&args)), 0);
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("certificate.json")).unwrap()).unwrap();
    assert!(cert["epsilon"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn verify_rejects_mismatched_control() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("p");
    assert_eq!(code(&picard_into(&p, &[])), 0);
    let o = run(&[
        "verify",
        "--preset",
        "kuramoto1",
        "--set",
        "model.n=12",
        "--control",
        path(&p.join("control.csv")),
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_rates_give_flat_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"model": {"custom": {"d": 3, "n": 4,
              "lambda0": [[0,0,0],[0,0,0],[0,0,0]],
              "lambda1": [[0,1,1],[1,0,1],[1,1,0]],
              "state_cost": [1, 0, 2]}},
            "grid": {"T": 1.0, "M": 10}, "mc": {"M": 50, "points": 5}}"#,
    )
    .unwrap();
    let p = tmp.path().join("p");
    let o = run(&["picard", "--config", path(&cfg), "--out", path(&p)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let zero = tmp.path().join("zero.csv");
    zero_control_all(&p.join("control.csv"), &zero);
    let s = tmp.path().join("s");
    let o = run(&["simulate", "--config", path(&cfg), "--control", path(&zero), "--out", path(&s)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(s.join("distribution.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').skip(1).collect()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| *r == rows[0]));
    assert_eq!(fs::read_to_string(s.join("trajectories.csv")).unwrap().lines().count(), 1);
}

fn zero_control_all(src: &Path, dst: &Path) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let head = lines.next().unwrap();
    let k = head.split(',').filter(|c| c.starts_with("a_")).count();
    let mut out = vec![head.to_string()];
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        let keep = cols.len() - k;
        let mut row: Vec<&str> = cols[..keep].to_vec();
        row.extend(std::iter::repeat("0").take(k));
        out.push(row.join(","));
    }
    fs::write(dst, out.join("\n") + "\n").unwrap();
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("f");
    fs::write(&file, "x").unwrap();
    assert_eq!(code(&picard_into(&file.join("sub"), &[])), 3);
}

#[test]
fn presets_list_names_every_preset() {
    let o = run(&["presets-list"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8_lossy(&o.stdout);
    for name in ["kuramoto1", "kuramoto2", "cyber", "kappa", "sigma2", "qU_rec"] {
        assert!(s.contains(name), "{name} missing");
    }
}
