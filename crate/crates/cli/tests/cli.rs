use std::path::Path;

use serde_json::Value;
use zispline::simulation::{
    surrogate, surrogate_curve, SurrogateConfig, SURROGATE_FACTOR_EFFECTS, SURROGATE_ZERO_LOGIT,
};
use zispline_cli::data::{read_dataset, write_dataset};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["zispline"];
    full.extend_from_slice(args);
    let code = zispline_cli::run_with(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn surrogate_file(dir: &Path, n: usize, seed: u64) -> String {
    let p = dir.join(format!("s{seed}.csv"));
    let data = surrogate(&SurrogateConfig { n, seed });
    write_dataset(std::fs::File::create(&p).unwrap(), &data, "dmfs").unwrap();
    p.to_str().unwrap().to_string()
}

const SPLINE_SPEC: &str = r#"
family = "zip"
[count]
terms = [{ column = "bmi", kind = "spline", degree = 3, knots = 1, regime = "variable" }]
[zero]
terms = [{ column = "soda", kind = "linear" }]
"#;

#[test]
fn intercept_only_poisson_recovers_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "y,x\n0,1\n2,2\n5,3\n1,4\n4,5\n");
    let spec = write(dir.path(), "m.toml", "family = \"poisson\"\n");
    let out = dir.path().join("o");
    let (code, stdout, _) = run(&["fit", "--data", &data, "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let r = json(&out.join("fit.json"));
    let mu = r["at_means"]["mu"].as_f64().unwrap();
    assert!((mu - 2.4).abs() < 1e-6, "{mu}");
    let b0 = r["parameters"][0]["value"].as_f64().unwrap();
    assert!((b0.exp() - 2.4).abs() < 1e-6);
    assert_eq!(r["parameters"][0]["label"], "count.intercept");
    assert_eq!(r["dimension"], 1);
}

#[test]
fn malformed_csv_exits_1_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "y,x\n0,1\n2,2\n5,oops\n");
    let spec = write(dir.path(), "m.toml", "family = \"poisson\"\n");
    let (code, _, err) = run(&["fit", "--data", &data, "--spec", &spec]);
    assert_eq!(code, 1);
    assert!(err.contains("line 4"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn spec_and_io_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "y,x\n0,1\n2,2\n");
    let spec = write(dir.path(), "m.toml", "family = \"zip\"\n[count]\nterms = [{ column = \"age\", kind = \"linear\" }]\n");
    let (code, _, err) = run(&["fit", "--data", &data, "--spec", &spec]);
    assert_eq!(code, 1);
    assert!(err.contains("age"), "{err}");
    let (code, _, _) = run(&["fit", "--data", "/nonexistent.csv", "--spec", &spec]);
    assert_eq!(code, 1);
    let (code, _, err) = run(&["fit", "--spec", &spec]);
    assert_eq!(code, 1);
    assert!(err.contains("--data"));
    let (code, _, _) = run(&["fit", "--bogus"]);
    assert_eq!(code, 1);
}

#[test]
fn fit_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = surrogate_file(dir.path(), 300, 4);
    let spec = write(dir.path(), "m.toml", SPLINE_SPEC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let (code, _, err) = run(&["fit", "--data", &data, "--spec", &spec, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
    }
    for f in ["fit.json", "curves.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let curves = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 201);
    let report = a.join("fit.json");
    let (code, stdout, err) = run(&["eval", "--data", &data, "--report", report.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("difference"));

    let parsed: zispline_cli::report::FitReport =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let d = read_dataset(Path::new(&data)).unwrap();
    let ll = zispline_cli::commands::evaluate_report(&parsed, &d).unwrap();
    assert!((ll - parsed.log_lik).abs() < 1e-8);
}

#[test]
fn eval_detects_tampered_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = surrogate_file(dir.path(), 200, 1);
    let spec = write(dir.path(), "m.toml", SPLINE_SPEC);
    let out = dir.path().join("o");
    run(&["fit", "--data", &data, "--spec", &spec, "--out", out.to_str().unwrap()]);
    let path = out.join("fit.json");
    let mut r = json(&path);
    let v = r["parameters"][0]["value"].as_f64().unwrap();
    r["parameters"][0]["value"] = Value::from(v + 0.1);
    std::fs::write(&path, serde_json::to_string(&r).unwrap()).unwrap();
    let (code, _, _) = run(&["eval", "--data", &data, "--report", path.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn non_convergence_exits_2_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = surrogate_file(dir.path(), 768, 1);
    let spec = write(
        dir.path(),
        "m.toml",
        "family = \"poisson\"\n[count]\nterms = [{ column = \"bmi\", kind = \"spline\", degree = 1, knots = 2, regime = \"variable\" }]\n",
    );
    let out = dir.path().join("o");
    let (code, _, err) = run(&[
        "fit", "--data", &data, "--spec", &spec, "--out", out.to_str().unwrap(), "--max-ebok-iter", "1",
    ]);
    assert_eq!(code, 2, "{err}");
    assert_eq!(json(&out.join("fit.json"))["converged"], false);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = surrogate_file(dir.path(), 120, 3);
    let spec = write(dir.path(), "m.toml", "family = \"zip\"\n[count]\nterms = [{ column = \"sweets\", kind = \"linear\" }]\n");
    let out = dir.path().join("o");
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!(
            "data = {data:?}\nspec = {spec:?}\nout = {:?}\nfolds = 4\nseed = 5\n",
            out.to_str().unwrap()
        ),
    );
    let (code, _, err) = run(&["cv", "--config", &cfg, "--folds", "3"]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out.join("cv.json"));
    assert_eq!(r["folds"], 3);
    assert_eq!(r["seed"], 5);
}

#[test]
fn select_ranks_a_two_model_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = surrogate_file(dir.path(), 300, 6);
    let grid = write(
        dir.path(),
        "g.toml",
        "[axes]\nfamily = [\"zinb\"]\n\"count.bmi\" = [\"linear\", \"spline:3:2:fixed\"]\n",
    );
    let out = dir.path().join("o");
    let (code, stdout, err) = run(&["select", "--data", &data, "--grid", &grid, "--folds", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out.join("select.json"));
    assert_eq!(r["models"].as_array().unwrap().len(), 2);
    assert_eq!(r["ranking"].as_array().unwrap().len(), 2);
    assert!(r["winner"].is_u64());
    let table_rows = stdout.lines().filter(|l| l.contains("zinb count[")).count();
    assert_eq!(table_rows, 3, "{stdout}");
    assert_eq!(stdout.matches("winner").count(), 2);
}

#[test]
fn select_axis_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = surrogate_file(dir.path(), 50, 6);
    let grid = write(dir.path(), "g.toml", "[axes]\n\"count.soda\" = [\"spline:3\"]\n");
    let (code, _, err) = run(&["select", "--data", &data, "--grid", &grid]);
    assert_eq!(code, 1);
    assert!(err.contains("count.soda"), "{err}");
    let grid = write(dir.path(), "g2.toml", "[axes]\n\"count.bmi\" = [\"spline:3:60:variable\"]\n");
    let (code, _, err) = run(&["select", "--data", &data, "--grid", &grid]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn study1_best_counts_sum_to_replications() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, stdout, err) = run(&[
        "simulate", "study1", "--alpha", "3", "--reps", "10", "--seed", "7", "--folds", "5", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("AIC best"));
    let r = json(&out.join("study1.json"));
    let group = &r["report"]["groups"][0];
    assert_eq!(group["tallied"], 10);
    for crit in ["sup", "l1", "aic", "bic", "mre"] {
        let total: u64 = group["families"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f[crit]["best"].as_u64().unwrap())
            .sum();
        assert_eq!(total, 10, "{crit}");
    }
    assert!(out.join("study1.txt").exists());
}

#[test]
fn study2_family_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = run(&[
        "simulate", "study2", "--reps", "5", "--knots", "1..3", "--no-mre", "--n", "120", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out.join("study2.json"));
    assert_eq!(r["report"]["family_names"].as_array().unwrap().len(), 1 + 3 * 2 * 2);
    let groups = r["report"]["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 4);
    assert_eq!(groups[0]["families"].as_array().unwrap().len(), 4);
    let (code, _, _) = run(&["simulate", "study2", "--knots", "3..1"]);
    assert_eq!(code, 1);
}

#[test]
fn surrogate_is_seeded_and_zero_inflated() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let (code, _, _) = run(&["surrogate", "--seed", "11", "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    let fa = std::fs::read(a.join("surrogate.csv")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("surrogate.csv")).unwrap());
    let data = read_dataset(&a.join("surrogate.csv")).unwrap();
    assert_eq!(data.n(), 768);
    assert_eq!(data.names(), &["bmi", "sweets", "brushing", "soda"]);
    // Poisson-implied fraction: a Poisson with each row's true mean
    let pi = 1.0 / (1.0 + (-SURROGATE_ZERO_LOGIT).exp());
    let n = data.n() as f64;
    let poisson: f64 = (0..data.n())
        .map(|i| {
            let row = data.row(i);
            let mut eta = surrogate_curve(row[0]);
            for (j, effect) in SURROGATE_FACTOR_EFFECTS.iter().enumerate() {
                eta += effect * row[j + 1];
            }
            (-(1.0 - pi) * eta.exp()).exp()
        })
        .sum::<f64>()
        / n;
    let zeros = data.y().iter().filter(|&&v| v == 0).count() as f64 / n;
    assert!(zeros > poisson + 0.1, "{zeros} vs {poisson}");
}
