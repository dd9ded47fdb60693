use std::path::Path;
use std::process::{Command, Output};

fn logo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = logo(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

#[test]
fn fit_then_eval_reproduces_training_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "5", "synth", "--family", "student-t", "--nu", "3", "--q", "400", "--p", "10", "--out", "train.csv"]);
    let net = ok(d, &["build-net", "--data", "train.csv", "--estimator", "kendall", "--max-clique", "4", "--out", "net.json"]);
    assert_eq!(value(&net, "edges"), 24.0);
    for model in ["normal_pearson", "normal_kendall", "student_pearson", "student_kendall_em", "student_pearson_em"] {
        let fit = ok(d, &["fit", "--data", "train.csv", "--network", "net.json", "--model", model, "--nu", "3", "--out", "m.json"]);
        let eval = ok(d, &["eval", "--model", "m.json", "--data", "train.csv"]);
        let (a, b) = (value(&fit, "log_likelihood"), value(&eval, "log_likelihood"));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{model}: {a} vs {b}");
    }
}

#[test]
fn fit_with_tail_estimate_reports_nu() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "6", "synth", "--family", "student-t", "--nu", "3", "--q", "4000", "--p", "3", "--out", "x.csv"]);
    ok(d, &["build-net", "--data", "x.csv", "--max-clique", "2", "--out", "net.json"]);
    let fit = ok(d, &["fit", "--data", "x.csv", "--network", "net.json", "--model", "student_pearson", "--nu", "tail_estimate", "--out", "m.json"]);
    let nu = value(&fit, "nu");
    assert!((2.05..=50.0).contains(&nu) && nu != 2.2, "{nu}");
}

#[test]
fn returns_from_prices() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("prices.csv"), "date,A,B\n2021-03-01,100,5\n2021-03-02,110,5\n2021-03-03,,5\n2021-03-04,121,5\n").unwrap();
    ok(d, &["returns", "--prices", "prices.csv", "--out", "r.csv"]);
    let text = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "A,B");
    assert_eq!(lines.len(), 3);
    let first: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
    assert!((first - 0.095_310_179_804_324_9).abs() < 1e-15, "{first}");

    std::fs::write(d.join("bad.csv"), "date,A,B\n2021-03-01,100,5\n2021-03-02,110,-5\n").unwrap();
    let out = logo(d, &["returns", "--prices", "bad.csv", "--out", "r2.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains('B'), "{err}");
}

const CONFIG: &str = r#"
clique_sizes = [3]
models = ["student_kendall_em"]
nu = 3.0
output = "results.csv"

[plan]
n_resamples = 1
p_select = 6
q_train = 50
q_test = 50
series_with_replacement = false
seed = 1

[source]
kind = "synthetic"
family = { student_t = 3.0 }
p = 6
"#;

#[test]
fn single_cell_sweep_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("sweep.toml"), CONFIG).unwrap();
    ok(d, &["--config", "sweep.toml", "sweep"]);
    let results = std::fs::read_to_string(d.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2, "{results}");
    assert!(results.lines().nth(1).unwrap().ends_with(",ok"));

    std::fs::write(d.join("glasso.csv"), "n_edges,ll_test_per_obs\n12,1.50\n15,1.6e0\n").unwrap();
    let args = ["aggregate", "--results", "results.csv", "--baseline", "glasso.csv", "--baseline-label", "glasso", "--out"];
    ok(d, &[&args[..], &["a1.csv"]].concat());
    ok(d, &[&args[..], &["a2.csv"]].concat());
    let a1 = std::fs::read(d.join("a1.csv")).unwrap();
    assert_eq!(a1, std::fs::read(d.join("a2.csv")).unwrap());
    let text = String::from_utf8(a1).unwrap();
    assert!(text.starts_with("model,max_clique,n_edges,mean_ll_test,q10,q90,is_argmax\n"));
    assert!(text.contains("glasso,,12,1.50,,,\n") && text.contains("glasso,,15,1.6e0,,,\n"), "{text}");
}

#[test]
fn sweep_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("sweep.toml"), CONFIG).unwrap();
    ok(d, &["--config", "sweep.toml", "--jobs", "2", "sweep", "--out", "a.csv"]);
    ok(d, &["--config", "sweep.toml", "--jobs", "1", "sweep", "--out", "b.csv"]);
    ok(d, &["--config", "sweep.toml", "--seed", "2", "sweep", "--out", "c.csv"]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    ok(d, &["--config", "sweep.toml", "sweep", "--out", "t.csv", "--timing"]);
    let timed = std::fs::read_to_string(d.join("t.csv")).unwrap();
    let fields: Vec<&str> = timed.lines().nth(1).unwrap().split(',').collect();
    assert!(fields[8].parse::<f64>().is_ok(), "{timed}");
}

#[test]
fn bad_input_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = logo(d, &["fit", "--bogus"]);
    assert!(!out.status.success());
    std::fs::write(d.join("net.json"), "{\"p\": 3, \"cliques\": ").unwrap();
    std::fs::write(d.join("x.csv"), "a,b,c\n1,2,3\n2,1,4\n").unwrap();
    let out = logo(d, &["fit", "--data", "x.csv", "--network", "net.json", "--model", "normal_pearson", "--out", "m.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("network document"));
    std::fs::write(d.join("cfg.toml"), "clique_sizes = []\n").unwrap();
    let out = logo(d, &["--config", "cfg.toml", "sweep", "--out", "r.csv"]);
    assert!(!out.status.success());
    let out = logo(d, &["fit", "--data", "x.csv", "--network", "net.json", "--model", "nope", "--out", "m.json"]);
    assert!(!out.status.success());
}
