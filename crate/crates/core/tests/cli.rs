use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_netmoments"));
    c.env_remove("NETMOMENTS_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn validate(schema: &str, doc: &Value) {
    let path = schema_dir().join(format!("{schema}.schema.json"));
    let s: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&s).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}\n{doc}");
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn manifest_of(p: &Path) -> Value {
    let m = read_json(Path::new(&format!("{}.manifest.json", p.display())));
    validate("run-manifest", &m);
    m
}

fn reference_model(dir: &Path, rho: f64) -> PathBuf {
    let p = dir.join("ref.json");
    write_json(&p, &json!({"K": 2, "pi": [0.5, 0.5], "S": [[2.0, 0.5], [0.5, 1.0]], "rho": rho}));
    p
}

fn er_model(dir: &Path, rho: f64) -> PathBuf {
    let p = dir.join("er.json");
    write_json(&p, &json!({"K": 1, "pi": [1.0], "S": [[1.0]], "rho": rho}));
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic_and_writes_latents() {
    let d = TempDir::new().unwrap();
    let model = er_model(d.path(), 0.05);
    let a = d.path().join("a.txt");
    let b = d.path().join("b.txt");
    ok(&["gen", "--model", s(&model), "-n", "100", "--seed", "7", "--out", s(&a), "--latents"]);
    ok(&["gen", "--model", s(&model), "-n", "100", "--seed", "7", "--out", s(&b)]);
    let ta = fs::read_to_string(&a).unwrap();
    let tb = fs::read_to_string(&b).unwrap();
    // identical apart from the manifest line
    assert_eq!(ta.lines().skip(1).collect::<Vec<_>>(), tb.lines().skip(1).collect::<Vec<_>>());
    assert!(ta.starts_with("# manifest: a.txt.manifest.json"));
    let m = manifest_of(&a);
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seed"], 7);
    let lat = fs::read_to_string(format!("{}.latents", a.display())).unwrap();
    let xi: Vec<f64> = lat.lines().filter(|l| !l.starts_with('#')).map(|l| l.parse().unwrap()).collect();
    assert_eq!(xi.len(), 100);
    assert!(xi.iter().all(|&x| x > 0.0 && x < 1.0));
    let c = d.path().join("c.txt");
    ok(&["gen", "--model", s(&model), "-n", "100", "--seed", "8", "--out", s(&c)]);
    assert_ne!(fs::read_to_string(&c).unwrap().lines().skip(1).collect::<Vec<_>>(), ta.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn gen_rejects_bad_models() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("bad.json");
    write_json(&p, &json!({"K": 2, "pi": [0.5, 0.5], "rho": 0.1}));
    let o = run(&["gen", "--model", s(&p), "-n", "10"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`S`"));
    write_json(&p, &json!({"K": 2, "pi": [0.5, 0.6], "S": [[1, 1], [1, 1]], "rho": 0.1}));
    let o = run(&["gen", "--model", s(&p), "-n", "10"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pi"));
}

#[test]
fn graphon_models_need_rho() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("w.json");
    write_json(&p, &json!({"resolution": 2, "grid": [[1.5, 0.5], [0.5, 1.5]]}));
    assert_eq!(code(&run(&["gen", "--model", s(&p), "-n", "10"])), 2);
    let out = d.path().join("g.txt");
    ok(&["gen", "--model", s(&p), "-n", "50", "--rho", "0.1", "--out", s(&out)]);
}

/// 40-vertex graph with a stored wheel count.
fn stored_graph(dir: &Path) -> PathBuf {
    let model = er_model(dir, 0.12);
    let g = dir.join("er40.txt");
    ok(&["gen", "--model", s(&model), "-n", "40", "--seed", "2024", "--out", s(&g)]);
    g
}

fn degrees_of(path: &Path) -> Vec<u64> {
    let text = fs::read_to_string(path).unwrap();
    let mut n = 0;
    let mut edges = Vec::new();
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("# nodes:") {
            n = v.trim().parse().unwrap();
        } else if !line.starts_with('#') && !line.trim().is_empty() {
            let mut it = line.split_whitespace().map(|t| t.parse::<usize>().unwrap());
            edges.push((it.next().unwrap(), it.next().unwrap()));
        }
    }
    let mut d = vec![0u64; n];
    for (a, b) in edges {
        d[a] += 1;
        d[b] += 1;
    }
    d
}

#[test]
fn moments_on_files() {
    let d = TempDir::new().unwrap();
    let g = stored_graph(d.path());
    let out = d.path().join("m.json");
    ok(&["moments", "--graph", s(&g), "-p", "edge", "-p", "wheel:k=2,l=1", "-p", "triangle", "--out", s(&out)]);
    let t = read_json(&out);
    validate("moment-table", &t);
    assert_eq!(t["estimator"], "pcheck");
    assert_eq!(t["manifest"], "m.json.manifest.json");
    manifest_of(&out);
    let e = &t["entries"];
    assert_eq!(e[0]["p_check"].as_f64().unwrap(), 1.0);
    // a hub-rooted 2-path is an ordered pair of distinct neighbours of its middle vertex
    let two_paths: u64 = degrees_of(&g).iter().map(|&x| x * x.saturating_sub(1)).sum();
    assert_eq!(e[1]["raw_count"].as_u64().unwrap(), two_paths);
    assert_eq!(e[1]["raw_count"].as_u64().unwrap(), 1206);
    let tri = e[2]["raw_count"].as_u64().unwrap();
    assert_eq!(e[1]["raw_count_induced"].as_u64().unwrap(), two_paths - 6 * tri);

    let q = d.path().join("q.json");
    ok(&["moments", "--graph", s(&g), "-p", "wheel:k=2,l=1", "--estimator", "qcheck", "--out", s(&q)]);
    let tq = read_json(&q);
    assert_eq!(tq["entries"][0]["estimate"], tq["entries"][0]["q_check"]);
}

#[test]
fn moments_degree_approx_on_a_tree() {
    let d = TempDir::new().unwrap();
    let g = d.path().join("tree.txt");
    // a spider: hub 0 with three legs of length 2, plus one extra leaf
    fs::write(&g, "0 1\n1 2\n0 3\n3 4\n0 5\n5 6\n0 7\n").unwrap();
    let exact = d.path().join("exact.json");
    let approx = d.path().join("approx.json");
    let keys = ["-p", "wheel:k=1,l=2", "-p", "wheel:k=1,l=3"];
    let mut a = vec!["moments", "--graph", s(&g), "--mode", "noninduced", "--estimator", "qcheck", "--out", s(&exact)];
    a.extend(keys);
    ok(&a);
    let mut b = vec!["moments", "--graph", s(&g), "--approx", "degree", "--out", s(&approx)];
    b.extend(keys);
    ok(&b);
    let (te, ta) = (read_json(&exact), read_json(&approx));
    validate("moment-table", &ta);
    assert_eq!(ta["method"], "degree-approx");
    // on a tree the falling-factorial numerator counts the stars exactly
    for i in 0..2 {
        assert_eq!(te["entries"][i]["raw_count"], ta["entries"][i]["raw_count"]);
    }
    // C(4, 2) at the hub plus one pair at each leg
    assert_eq!(ta["entries"][0]["raw_count"], 6 + 3);
    let o = run(&["moments", "--graph", s(&g), "--approx", "degree", "-p", "triangle"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn population_table_from_a_model() {
    let d = TempDir::new().unwrap();
    let model = reference_model(d.path(), 0.01);
    let out = d.path().join("t.json");
    ok(&["moments", "--model", s(&model), "-p", "wheel:k=1,l=2", "-p", "wheel:k=2,l=1", "--out", s(&out)]);
    let t = read_json(&out);
    validate("moment-table", &t);
    assert!((t["entries"][0]["tau"].as_f64().unwrap() - 1.0625).abs() < 1e-12);
    assert!((t["entries"][1]["tau"].as_f64().unwrap() - 1.0625).abs() < 1e-12);
}

#[test]
fn fit_commands() {
    let d = TempDir::new().unwrap();
    let g = stored_graph(d.path());
    let out = d.path().join("fit.json");
    ok(&["fit", "--graph", s(&g), "-k", "1", "--out", s(&out)]);
    let f = read_json(&out);
    validate("fit-result", &f);
    assert_eq!(f["pi"], json!([1.0]));
    assert_eq!(f["S"], json!([[1.0]]));
    manifest_of(&out);

    // equal blocks with constant row sums: degrees carry no block signal
    let flat = d.path().join("flat.json");
    write_json(&flat, &json!({"K": 2, "pi": [0.5, 0.5], "S": [[1.5, 0.5], [0.5, 1.5]], "rho": 0.01}));
    let fg = d.path().join("flat.txt");
    ok(&["gen", "--model", s(&flat), "-n", "2000", "--seed", "3", "--out", s(&fg)]);
    let o = run(&["fit", "--graph", s(&fg), "-k", "2"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("identifiable"));
}

#[test]
fn fit_reference_with_stages_and_weights() {
    let d = TempDir::new().unwrap();
    let model = reference_model(d.path(), 20.0 / 1999.0);
    let g = d.path().join("ref.txt");
    ok(&["gen", "--model", s(&model), "-n", "2000", "--seed", "11", "--out", s(&g)]);
    let out = d.path().join("fit.json");
    ok(&["fit", "--graph", s(&g), "--K", "2", "--report-stages", "--out", s(&out)]);
    let f = read_json(&out);
    validate("fit-result", &f);
    assert_eq!(f["atoms"].as_array().unwrap().len(), 2);
    let pi: Vec<f64> = serde_json::from_value(f["pi"].clone()).unwrap();
    assert!(pi.iter().all(|p| (p - 0.5).abs() < 0.1), "{pi:?}");
    let w = d.path().join("fitw.json");
    ok(&["fit", "--graph", s(&g), "-k", "2", "--weights", "bootstrap", "--bootstrap-b", "50", "--out", s(&w)]);
    let fw = read_json(&w);
    validate("fit-result", &fw);
    assert!(fw.get("atoms").is_none());
}

#[test]
fn degrees_with_coupling() {
    let d = TempDir::new().unwrap();
    let model = reference_model(d.path(), 0.02);
    let g = d.path().join("g.txt");
    ok(&["gen", "--model", s(&model), "-n", "500", "--seed", "5", "--out", s(&g), "--latents"]);
    let out = d.path().join("deg.json");
    let csv = d.path().join("deg.csv");
    let lat = format!("{}.latents", g.display());
    ok(&["degrees", "--graph", s(&g), "-m", "3", "--csv", s(&csv), "--model", s(&model), "--latents", &lat, "--out", s(&out)]);
    let sum = read_json(&out);
    validate("degree-summary", &sum);
    assert!(sum["coupling_error"].as_f64().unwrap() >= 0.0);
    let m = manifest_of(&out);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 501);
    let degs = degrees_of(&g);
    for (i, line) in text.lines().skip(1).enumerate().take(50) {
        let d1: u64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(d1, degs[i]);
    }
}

#[test]
fn bootstrap_commands() {
    let d = TempDir::new().unwrap();
    let g = stored_graph(d.path());
    let a = d.path().join("a.json");
    let b = d.path().join("b.json");
    ok(&["bootstrap", "--graph", s(&g), "--key", "wheel:k=2,l=1", "-m", "20", "--B", "40", "--seed", "3", "--out", s(&a)]);
    ok(&["bootstrap", "--graph", s(&g), "--key", "wheel:k=2,l=1", "-m", "20", "-b", "40", "--seed", "3", "--threads", "1", "--out", s(&b)]);
    let (ja, jb) = (read_json(&a), read_json(&b));
    validate("bootstrap-result", &ja);
    assert_eq!(ja["sigma2_hat"], jb["sigma2_hat"]);
    assert_eq!(ja["replicates_summary"], jb["replicates_summary"]);
    assert!(ja.get("replicates").is_none());

    let full = d.path().join("full.json");
    ok(&["bootstrap", "--graph", s(&g), "--key", "wheel:k=2,l=1", "-m", "40", "--B", "10", "--replicates", "--out", s(&full)]);
    let jf = read_json(&full);
    assert_eq!(jf["sigma2_hat"].as_f64().unwrap(), 0.0);
    assert_eq!(jf["replicates"].as_array().unwrap().len(), 10);

    let o = run(&["bootstrap", "--graph", s(&g), "--key", "wheel:k=2,l=1", "-m", "41"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn budget_exhaustion_exits_4() {
    let d = TempDir::new().unwrap();
    let model = er_model(d.path(), 0.2);
    let g = d.path().join("dense.txt");
    ok(&["gen", "--model", s(&model), "-n", "60", "--seed", "1", "--out", s(&g)]);
    let o = run(&["--budget", "1000", "moments", "--graph", s(&g), "-p", "wheel:k=3,l=2"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["--budget", "100", "degrees", "--graph", s(&g), "-m", "4"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn input_errors_exit_2() {
    let d = TempDir::new().unwrap();
    let g = d.path().join("loop.txt");
    fs::write(&g, "0 1\n2 2\n").unwrap();
    let o = run(&["moments", "--graph", s(&g)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(code(&run(&["moments", "--graph", "/nonexistent/file"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let empty = d.path().join("empty.txt");
    fs::write(&empty, "# nodes: 5\n").unwrap();
    assert_eq!(code(&run(&["moments", "--graph", s(&empty)])), 3);
}

#[test]
fn thread_count_from_environment() {
    let d = TempDir::new().unwrap();
    let g = stored_graph(d.path());
    let a = d.path().join("a.json");
    let o = bin()
        .env("NETMOMENTS_THREADS", "3")
        .args(["moments", "--graph", s(&g), "-p", "triangle", "--out", s(&a)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest_of(&a)["threads"], 3);
    let o = bin().env("NETMOMENTS_THREADS", "0").args(["moments", "--graph", s(&g)]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_lines_are_reproducible() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("sweep.json");
    let config = json!({
        "name": "grid",
        "models": [{"name": "ref", "block": {"K": 2, "pi": [0.5, 0.5], "S": [[2.0, 0.5], [0.5, 1.0]], "rho": 0.01}}],
        "n": [100, 200, 300, 400],
        "lambda": [{"c": 2.0, "exponent": 0.3}],
        "replicates": 3,
        "metrics": ["rho_hat", "qcheck", "tau", "coupling_error"],
        "keys": ["wheel:k=2,l=1"],
        "degree_m": 2
    });
    validate("sweep-config", &config);
    write_json(&cfg, &config);
    let a = d.path().join("a.jsonl");
    let b = d.path().join("b.jsonl");
    ok(&["sweep", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["sweep", "--config", s(&cfg), "--threads", "1", "--out", s(&b)]);
    let ta = fs::read(&a).unwrap();
    assert_eq!(ta, fs::read(&b).unwrap());
    let lines: Vec<Value> = String::from_utf8(ta).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 12);
    for l in &lines {
        validate("sweep-line", l);
        assert!(l["metrics"]["qcheck"]["wheel:k=2,l=1"].as_f64().unwrap() > 0.0);
    }
    manifest_of(&a);

    let bad = d.path().join("bad.json");
    write_json(&bad, &json!({"models": [], "n": [10], "replicates": 1, "metrics": [], "typo": 1}));
    assert_eq!(code(&run(&["sweep", "--config", s(&bad)])), 2);
}

#[test]
fn shipped_model_schemas_accept_examples() {
    validate("block-model", &json!({"K": 2, "pi": [0.5, 0.5], "S": [[2.0, 0.5], [0.5, 1.0]], "rho": 0.01}));
    validate("graphon", &json!({"resolution": 1, "grid": [[1.0]]}));
}
