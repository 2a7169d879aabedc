use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use clustereif::data::write_dataset_csv;
use clustereif::estimator::{linspace, REPORT_SCHEMA};
use clustereif::simulation::{generate_dgp, DgpConfig, SizeDist};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clustereif"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_dgp(&DgpConfig {
            m: 80,
            size_dist: SizeDist::Uniform { lo: 3, hi: 6 },
            seed: 5,
        });
        write_dataset_csv(&data, dir.path().join("data.csv")).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn estimate(&self, config: &Path, out: &str, extra: &[&str]) -> Output {
        let data = self.path("data.csv");
        let out = self.path(out);
        let mut args = vec![
            "estimate",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        run(&args)
    }
}

const ESTIMATE: &str = r#"
estimands = ["mu", "de"]

[[grid]]
policy = "cips:delta0=1,mode=constant"
from = 0.5
to = 2.0
points = 16

[estimator]
K = 2
r = "exact"
seed = 11

[estimator.learner]
learners = ["logit"]
"#;

/// Checks the subset of JSON Schema the report schema uses.
fn conforms(v: &Value, s: &Value) -> Result<(), String> {
    if let Some(t) = s.get("type").and_then(Value::as_str) {
        let ok = match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            _ => return Err(format!("unsupported type {t}")),
        };
        if !ok {
            return Err(format!("{v} is not {t}"));
        }
    }
    if let Some(min) = s.get("minimum").and_then(Value::as_f64) {
        if v.as_f64().is_some_and(|x| x < min) {
            return Err(format!("{v} below {min}"));
        }
    }
    if let Some(c) = s.get("const") {
        if v != c {
            return Err(format!("{v} != {c}"));
        }
    }
    if let Some(e) = s.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            return Err(format!("{v} not in {e:?}"));
        }
    }
    if let Some(alts) = s.get("oneOf").and_then(Value::as_array) {
        let hits = alts.iter().filter(|a| conforms(v, a).is_ok()).count();
        if hits != 1 {
            return Err(format!("{v} matches {hits} alternatives"));
        }
    }
    if let Some(obj) = v.as_object() {
        let props = s.get("properties").and_then(Value::as_object);
        for r in s.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(r.as_str().unwrap()) {
                return Err(format!("missing {r}"));
            }
        }
        for (k, x) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => conforms(x, sub).map_err(|e| format!("{k}: {e}"))?,
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let (Some(arr), Some(items)) = (v.as_array(), s.get("items")) {
        for (i, x) in arr.iter().enumerate() {
            conforms(x, items).map_err(|e| format!("[{i}]: {e}"))?;
        }
    }
    Ok(())
}

#[test]
fn grid_gives_one_record_per_point_and_kind() {
    let fx = Fixture::new();
    let cfg = fx.write("run.toml", ESTIMATE);
    let o = fx.estimate(&cfg, "report.json", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(fx.path("report.json")).unwrap()).unwrap();
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    conforms(&report, &schema).unwrap();
    assert_eq!(report["meta"]["m"], 80);
    assert_eq!(report["meta"]["seed"], 11);
    let results = report["results"].as_array().unwrap();
    assert_eq!(results.len(), 32);
    let grid = linspace(0.5, 2.0, 16);
    for kind in ["mu", "de"] {
        let params: Vec<f64> = results
            .iter()
            .filter(|r| r["estimand"] == kind)
            .map(|r| r["param"].as_f64().unwrap())
            .collect();
        assert_eq!(params, grid);
    }
    for r in results {
        let (lo, hi, pt) = (r["ci_lo"].as_f64().unwrap(), r["ci_hi"].as_f64().unwrap(), r["point"].as_f64().unwrap());
        assert!(lo <= pt && pt <= hi);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let fx = Fixture::new();
    let cfg = fx.write("run.toml", ESTIMATE);
    assert!(fx.estimate(&cfg, "a.json", &[]).status.success());
    assert!(fx.estimate(&cfg, "b.json", &["--threads", "1"]).status.success());
    let a = std::fs::read(fx.path("a.json")).unwrap();
    assert_eq!(a, std::fs::read(fx.path("b.json")).unwrap());
    assert!(fx.estimate(&cfg, "c.json", &["--seed", "12"]).status.success());
    assert_ne!(a, std::fs::read(fx.path("c.json")).unwrap());
}

#[test]
fn missing_column_is_a_config_error() {
    let fx = Fixture::new();
    let cfg = fx.write(
        "run.toml",
        "estimands = [\"mu\"]\npolicies = [\"cms:lambda=0.5,xstar=xstar\"]\n[estimator]\nr = \"exact\"\n",
    );
    let o = fx.estimate(&cfg, "r.json", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("xstar"), "{}", stderr(&o));
    assert!(!fx.path("r.json").exists());
}

#[test]
fn exit_codes_separate_config_data_and_estimation() {
    let fx = Fixture::new();
    let cfg = fx.write("run.toml", ESTIMATE);
    let typo = fx.write("typo.toml", "estimands = [\"mu\"]\npolicy = [\"tpb:rho=0.3\"]\n");
    assert_eq!(fx.estimate(&typo, "r.json", &[]).status.code(), Some(1));
    let bad_kind = fx.write("kind.toml", "estimands = [\"ate\"]\npolicies = [\"tpb:rho=0.3\"]\n");
    assert_eq!(fx.estimate(&bad_kind, "r.json", &[]).status.code(), Some(1));

    // Non-binary treatment.
    let text = std::fs::read_to_string(fx.path("data.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[2] = "2".into();
    lines[1] = cells.join(",");
    fx.write("data.csv", &(lines.join("\n") + "\n"));
    let o = fx.estimate(&cfg, "r.json", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // Too few clusters for the requested folds.
    let tiny = generate_dgp(&DgpConfig {
        m: 3,
        size_dist: SizeDist::Point(3),
        seed: 1,
    });
    write_dataset_csv(&tiny, fx.path("data.csv")).unwrap();
    let o = fx.estimate(&cfg, "r.json", &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn policies_and_estimands_from_flags() {
    let fx = Fixture::new();
    let cfg = fx.write("run.toml", ESTIMATE);
    let o = fx.estimate(
        &cfg,
        "r.json",
        &["--policy", "tpb:rho=0.3", "--policy", "typeb:alpha=0.4", "--estimand", "mu1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(fx.path("r.json")).unwrap()).unwrap();
    let policies: Vec<&str> = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["policy"].as_str().unwrap())
        .collect();
    assert_eq!(policies, ["tpb:rho=0.3", "typeb:alpha=0.4"]);
}

#[test]
fn simulate_smoke_writes_the_table() {
    let fx = Fixture::new();
    let cfg = fx.write(
        "sim.toml",
        r#"
D = 2
estimators = ["nss", "pss"]
estimands = ["mu", "de"]
policies = ["cips:delta0=1", "tpb:rho=0.3"]
truth_mc = 2000

[dgp]
m = 60
size_dist = "uniform:3-6"

[estimator]
r = "exact"

[estimator.learner]
learners = ["logit"]
"#,
    );
    let out = fx.path("bench.csv");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("estimand,estimator,truth,bias,rmse,ase,ese,cov,rmse_ratio"));
    assert_eq!(lines.count(), 8);

    let bad = fx.write("bad.toml", &std::fs::read_to_string(&cfg).unwrap().replace("\"pss\"", "\"tmle\""));
    let o = run(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tmle"));
}

#[test]
fn truth_is_cached_and_reproduces_reference_values() {
    let fx = Fixture::new();
    let cfg = fx.write(
        "truth.toml",
        &format!(
            "estimands = [\"mu\"]\npolicies = [\"cips:delta0=2\", \"tpb:rho=0.6\"]\ntruth_cache = {:?}\n",
            fx.path("cache.json").to_str().unwrap()
        ),
    );
    let go = |out: &str| {
        let p = fx.path(out);
        let t = Instant::now();
        let o = run(&["truth", "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        (t.elapsed(), std::fs::read_to_string(p).unwrap())
    };
    let (cold, first) = go("t1.json");
    let (warm, second) = go("t2.json");
    assert_eq!(first, second);
    assert!(cold.as_secs_f64() >= 100.0 * warm.as_secs_f64(), "cold {cold:?}, warm {warm:?}");

    let v: Value = serde_json::from_str(&first).unwrap();
    let r = v["results"].as_array().unwrap();
    let (cips, tpb) = (&r[0], &r[1]);
    assert_eq!(cips["policy"], "cips:delta0=2,mode=constant");
    assert!((cips["truth"].as_f64().unwrap() - 0.300).abs() <= 0.002);
    let tol = 0.003 + 3.0 * tpb["mc_se"].as_f64().unwrap();
    assert!((tpb["truth"].as_f64().unwrap() - 0.316).abs() <= tol, "{tpb}");
}

#[test]
fn validate_reports_without_running() {
    let fx = Fixture::new();
    let cfg = fx.write("run.toml", ESTIMATE);
    let data = fx.path("data.csv");
    let o = run(&["validate", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("data: 80 clusters"));
    assert!(text.contains("32 estimands"));
    let o = run(&["validate", "--kind", "truth", "--policy", "cms:lambda=1,xstar=x2", "--estimand", "te"]);
    assert_eq!(o.status.code(), Some(1), "te needs a reference policy");
    let o = run(&["estimate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}
