use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use posi::sampler::quantile_batch_se;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["posi"];
    argv.extend_from_slice(args);
    posi::cli::run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

/// n = 120, p = 6, three groups of two; only the first group is active.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let (n, p) = (120, 6);
        let mut x = vec![vec![0.0; p]; n];
        let mut y = vec![vec![0.0]; n];
        for i in 0..n {
            for v in x[i].iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            y[i][0] = 3.0 * x[i][0] - 2.0 * x[i][1] + e;
        }
        write_matrix(&dir.path().join("x.csv"), &x);
        write_matrix(&dir.path().join("y.csv"), &y);
        fs::write(
            dir.path().join("groups.json"),
            r#"{"variant": "disjoint", "groups": [[1, 2], [3, 4], [5, 6]], "weights": [25, 25, 25]}"#,
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn fit(&self, out: &str) -> i32 {
        run(&[
            "fit",
            "--x",
            s(&self.path("x.csv")),
            "--y",
            s(&self.path("y.csv")),
            "--groups",
            s(&self.path("groups.json")),
            "--tau2",
            "120",
            "--seed",
            "7",
            "--sigma",
            "1",
            "--out",
            s(&self.path(out)),
        ])
    }

    fn infer(&self, selection: &str, out: &str, extra: &[&str]) -> i32 {
        let mut args = vec![
            "infer",
            "--selection",
            s(&self.path(selection)),
            "--draws",
            "1200",
            "--seed",
            "3",
            "--out",
            s(&self.path(out)),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&refs)
    }
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn identity_example_freezes_the_closed_form_selection() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n);
    write_matrix(&p("x.csv"), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    write_matrix(&p("y.csv"), &[vec![0.0], vec![0.0]]);
    write_matrix(&p("omega.csv"), &[vec![1.0], vec![-0.5]]);
    fs::write(p("g.json"), r#"{"variant": "disjoint", "groups": [[1, 2]], "weights": [1]}"#).unwrap();
    let code = run(&[
        "fit", "--x", s(&p("x.csv")), "--y", s(&p("y.csv")), "--groups", s(&p("g.json")), "--tau2", "1", "--omega",
        s(&p("omega.csv")), "--sigma", "1", "--out", s(&p("sel.json")),
    ]);
    assert_eq!(code, 0);
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("sel.json")).unwrap()).unwrap();
    assert_eq!(sel["record"]["active"], serde_json::json!([0, 1]));
    let gamma = sel["record"]["gamma"][0].as_f64().unwrap();
    assert!((gamma - 0.118034).abs() < 1e-5, "gamma = {gamma}");
}

#[test]
fn zero_response_exits_with_the_empty_selection_code() {
    let f = Fixture::new();
    let zeros: Vec<Vec<f64>> = (0..120).map(|_| vec![0.0]).collect();
    write_matrix(&f.path("y.csv"), &zeros);
    fs::write(
        f.path("groups.json"),
        r#"{"variant": "disjoint", "groups": [[1, 2], [3, 4], [5, 6]], "weights": [1000, 1000, 1000]}"#,
    )
    .unwrap();
    assert_eq!(f.fit("sel.json"), 2);
    assert!(!f.path("sel.json").exists());
}

#[test]
fn fit_is_byte_deterministic_and_does_not_touch_inputs() {
    let f = Fixture::new();
    let before: Vec<String> = ["x.csv", "y.csv", "groups.json"].iter().map(|n| digest(&f.path(n))).collect();
    assert_eq!(f.fit("a.json"), 0);
    assert_eq!(f.fit("b.json"), 0);
    assert_eq!(fs::read(f.path("a.json")).unwrap(), fs::read(f.path("b.json")).unwrap());
    let after: Vec<String> = ["x.csv", "y.csv", "groups.json"].iter().map(|n| digest(&f.path(n))).collect();
    assert_eq!(before, after);
    assert!(f.path("a.json.manifest.json").exists());
}

#[test]
fn infer_reports_nested_levels_functionals_and_the_chain() {
    let f = Fixture::new();
    assert_eq!(f.fit("sel.json"), 0);
    assert_eq!(f.infer("sel.json", "iv.csv", &["--levels", "0.8,0.9,0.95", "--functional", "l2:group=1"]), 0);
    let rows = read_rows(&f.path("iv.csv"));
    let coef: Vec<_> = rows.iter().filter(|r| &r[0] == "coefficient").collect();
    let func: Vec<_> = rows.iter().filter(|r| &r[0] == "functional").collect();
    assert_eq!(func.len(), 3);
    assert_eq!(coef.len() % 3, 0);
    for chunk in coef.chunks(3).chain(std::iter::once(&func[..])) {
        let bounds: Vec<(f64, f64)> = chunk.iter().map(|r| (r[6].parse().unwrap(), r[7].parse().unwrap())).collect();
        for w in bounds.windows(2) {
            assert!(w[1].0 <= w[0].0 && w[0].1 <= w[1].1, "levels not nested: {bounds:?}");
        }
    }
    // the true active columns are 1 and 2
    let cols: Vec<&str> = coef.iter().map(|r| &r[1]).collect();
    assert!(cols.contains(&"1") && cols.contains(&"2"));

    let chain = read_rows(&f.path("iv.chain.csv"));
    assert_eq!(chain.len(), 1200 - 100);
    assert!(f.path("iv.csv.manifest.json").exists());

    assert_eq!(f.infer("sel.json", "again.csv", &["--levels", "0.8,0.9,0.95", "--functional", "l2:group=1"]), 0);
    assert_eq!(fs::read(f.path("iv.csv")).unwrap(), fs::read(f.path("again.csv")).unwrap());
}

#[test]
fn tampered_selection_or_changed_data_is_rejected() {
    let f = Fixture::new();
    assert_eq!(f.fit("sel.json"), 0);
    let text = fs::read_to_string(f.path("sel.json")).unwrap();
    let tampered = text.replacen("\"seed\": 7", "\"seed\": 8", 1);
    assert_ne!(tampered, text);
    fs::write(f.path("bad.json"), tampered).unwrap();
    assert_eq!(f.infer("bad.json", "iv.csv", &[]), 4);
    fs::write(f.path("garbage.json"), "{").unwrap();
    assert_eq!(f.infer("garbage.json", "iv.csv", &[]), 4);

    let mut y = fs::read_to_string(f.path("y.csv")).unwrap();
    y = y.replacen('\n', "1\n", 1);
    fs::write(f.path("y.csv"), y).unwrap();
    assert_eq!(f.infer("sel.json", "iv.csv", &[]), 4);
}

#[test]
fn functional_on_an_unselected_group_is_an_error() {
    let f = Fixture::new();
    assert_eq!(f.fit("sel.json"), 0);
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("sel.json")).unwrap()).unwrap();
    let selected: Vec<u64> = sel["record"]["selected_groups"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let missing = (0..3).find(|g| !selected.contains(g)).expect("one null group stays out") + 1;
    let request = format!("l2:group={missing}");
    assert_eq!(f.infer("sel.json", "iv.csv", &["--functional", &request]), 4);
    assert_eq!(f.infer("sel.json", "iv.csv", &["--levels", "0.9,1.2"]), 4);
    assert_eq!(f.infer("sel.json", "iv.csv", &["--prior", "cauchy"]), 4);
}

#[test]
fn diffuse_gaussian_prior_matches_the_flat_prior() {
    let f = Fixture::new();
    assert_eq!(f.fit("sel.json"), 0);
    assert_eq!(f.infer("sel.json", "flat.csv", &["--prior", "flat"]), 0);
    assert_eq!(f.infer("sel.json", "gauss.csv", &["--prior", "gaussian", "--prior-var", "1e6"]), 0);
    let chain = read_rows(&f.path("flat.chain.csv"));
    let flat = read_rows(&f.path("flat.csv"));
    let gauss = read_rows(&f.path("gauss.csv"));
    for (j, (a, b)) in flat.iter().zip(&gauss).enumerate() {
        let col: Vec<f64> = chain.iter().map(|r| r[j].parse().unwrap()).collect();
        for (k, prob) in [(6, 0.05), (7, 0.95)] {
            let se = quantile_batch_se(&col, prob, 20);
            let (x, y): (f64, f64) = (a[k].parse().unwrap(), b[k].parse().unwrap());
            assert!((x - y).abs() < 4.0 * se, "column {j}: {x} vs {y}, se {se}");
        }
    }
}

#[test]
fn replaying_the_manifest_reproduces_the_outputs() {
    let f = Fixture::new();
    assert_eq!(f.fit("sel.json"), 0);
    assert_eq!(f.infer("sel.json", "iv.csv", &["--levels", "0.9,0.95"]), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("iv.csv.manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_object().unwrap().clone();
    for path in outputs.keys() {
        fs::remove_file(path).unwrap();
    }
    let args: Vec<String> = manifest["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    assert_eq!(posi::cli::run(args), 0);
    for (path, hash) in outputs {
        assert_eq!(digest(Path::new(&path)), hash.as_str().unwrap());
    }
}

#[test]
fn oracle_check_filters_and_fails_loudly_under_a_fault() {
    assert_eq!(run(&["oracle-check", "--only", "jacobian"]), 0);
    assert_eq!(run(&["oracle-check", "--only", "gradient", "--inject-fault", "flip-jstar"]), 3);
    assert_eq!(run(&["oracle-check", "--only", "nonsense"]), 4);
}

fn scenario(dir: &Path, label: &str) -> PathBuf {
    let path = dir.join(format!("scenario-{}.toml", label.replace(':', "-")));
    fs::write(
        &path,
        format!("setting = \"balanced\"\nsnr = \"medium\"\nrandomization = \"{label}\"\nreplications = 2\ndraws = 400\n"),
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_one_row_per_method_and_replication() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario(dir.path(), "1:1");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--jobs", "1", "--out-dir", s(&a)]), 0);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--jobs", "2", "--out-dir", s(&b)]), 0);
    assert_eq!(read_rows(&a.join("metrics.csv")).len(), 6);
    assert_eq!(read_rows(&a.join("summary.csv")).len(), 3);
    assert!(a.join("manifest.json").exists());
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn simulate_rejects_unknown_labels_and_flags() {
    let dir = TempDir::new().unwrap();
    let bad = scenario(dir.path(), "3:1");
    assert_eq!(run(&["simulate", "--config", s(&bad), "--out-dir", s(&dir.path().join("o"))]), 4);
    let good = scenario(dir.path(), "1:1");
    assert_eq!(run(&["simulate", "--config", s(&good), "--f1-unit", "atoms", "--out-dir", s(&dir.path().join("o"))]), 4);
    assert_eq!(run(&["simulate", "--config", s(&good), "--jobs", "0", "--out-dir", s(&dir.path().join("o"))]), 4);
}

#[test]
fn binary_reports_errors_through_its_exit_status() {
    let bin = env!("CARGO_BIN_EXE_posi");
    let out = Command::new(bin).args(["fit", "--x", "missing.csv", "--y", "missing.csv", "--groups", "g.json", "--tau2", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
