use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_adapter-inversion");

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn attack_writes_reports_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&a);
        let dir = &a;
        let (code, err) = run(&[
            "attack",
            "--seed",
            "9",
            "--out",
            dir.to_str().unwrap(),
            "--override",
            "batch_sizes=[1,3]",
            "--override",
            "rounds=2",
        ]);
        assert_eq!(code, 0, "{err}");
        snapshots.push(files(&a));
    }
    assert!(snapshots[0] == snapshots[1], "outputs differ between runs");
    let fa = &snapshots[0];
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"summary.csv"));
    assert!(names.contains(&"manifest.json"));
    assert!(names.iter().filter(|n| n.starts_with("reports")).count() == 4);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next(),
        Some("batch_size,round,R1,R2,bag_recall,bag_precision,seconds")
    );
    assert!(lines.all(|l| l.contains(",100,100,1,1,")));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "attack");
    assert_eq!(manifest["config"]["seed"], 9);
}

#[test]
fn corpus_config_with_relative_path() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.txt"),
        "a small red fox\n\nthe dog ran home\nwe sat\n",
    )
    .unwrap();
    fs::write(
        tmp.path().join("exp.toml"),
        "corpus_path = \"c.txt\"\nbatch_sizes = [2]\nrounds = 1\n[model]\nvocab_size = 0\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("exp.toml");
    let (code, err) = run(&[
        "attack",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let report = fs::read_to_string(out.join("reports/b2_r0.json")).unwrap();
    assert!(report.contains("<eos>"));
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(
        run(&["attack", "--out", out, "--override", "nonsense=1"]).0,
        1
    );
    assert_eq!(
        run(&["attack", "--out", out, "--override", "noequals"]).0,
        1
    );
    assert_eq!(run(&["attack", "--config", "/nonexistent/x.toml"]).0, 1);
    assert_eq!(
        run(&[
            "attack",
            "--out",
            out,
            "--override",
            "model.attention_mode=\"bidirectional\""
        ])
        .0,
        1
    );
    assert_eq!(
        run(&["attack", "--out", out, "--override", "batch_sizes=[64]"]).0,
        1
    );
    let empty = [
        "--override",
        "defense_sweep.sigmas=[]",
        "--override",
        "defense_sweep.prune_rates=[]",
    ];
    assert_eq!(
        run(&[&["defense-sweep", "--out", out][..], &empty[..]].concat()).0,
        1
    );
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn unwritable_output_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let (code, err) = run(&[
        "attack",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "batch_sizes=[1]",
        "--override",
        "rounds=1",
    ]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn sweeps_and_capacity_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let (code, err) = run(&[
        "defense-sweep",
        "--out",
        d.to_str().unwrap(),
        "--override",
        "batch_sizes=[2]",
        "--override",
        "rounds=2",
        "--override",
        "defense_sweep.sigmas=[0.0]",
        "--override",
        "defense_sweep.prune_rates=[0.0, 0.99]",
    ]);
    assert_eq!(code, 0, "{err}");
    let t = fs::read_to_string(d.join("defense_sweep.csv")).unwrap();
    assert_eq!(
        t,
        "defense,parameter,success_rate,mean_r1,mean_r2,runs\ndp,0,1,100,100,2\nprune,0,1,100,100,2\nprune,0.99,0,0,0,2\n"
    );

    let h = tmp.path().join("h");
    let (code, err) = run(&[
        "hparam-sweep",
        "--out",
        h.to_str().unwrap(),
        "--override",
        "rounds=1",
        "--override",
        "hparam_sweep.reduction_factors=[2]",
        "--override",
        "hparam_sweep.reduction_factor_batch_sizes=[1]",
        "--override",
        "hparam_sweep.epsilons=[0.1]",
        "--override",
        "hparam_sweep.epsilon_batch_sizes=[1]",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(h.join("reduction_factor.csv"))
        .unwrap()
        .starts_with("reduction_factor,batch_size,"));
    assert!(fs::read_to_string(h.join("epsilon.csv"))
        .unwrap()
        .starts_with("epsilon,batch_size,"));

    let c = tmp.path().join("c");
    let (code, err) = run(&[
        "capacity",
        "--out",
        c.to_str().unwrap(),
        "--override",
        "capacity.batch_sizes=[1,2,4]",
        "--override",
        "capacity.rounds=5",
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(c.join("capacity.csv")).unwrap();
    let rows: Vec<Vec<usize>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|r| r[4] <= r[3] && r[3] <= r[5]));
}
