use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spikein(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikein"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SCENARIO: &str = r#"
methods = ["odb", "rct", "spiked", "dynamic"]

[base]
n_o = 400
n_r = 60
k = 10
n_cov_draws = 2
n_assign_draws = 2

[[rows]]
effect_shape = "constant"

[[rows]]
effect_shape = "linear_bin"
enrollment = "restricted"
gamma = "uncorrelated3"
"#;

fn write_scenario(dir: &Path) -> String {
    let p = dir.join("scenario.toml");
    fs::write(&p, SCENARIO).unwrap();
    p.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path());
    let run = |out: &str| {
        let out = tmp.path().join(out);
        let o = spikein(&[
            "simulate",
            "--scenario",
            &scenario,
            "--seed",
            "7",
            "--keep-draws",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        files(&out)
    };
    let a = run("a");
    let b = run("b");
    // The manifest echoes the output directory; everything else must match.
    let strip = |files: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        files
            .iter()
            .map(|(n, bytes)| {
                if n == "manifest.json" {
                    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                    v["config"].as_object_mut().unwrap().remove("out");
                    (n.clone(), serde_json::to_vec(&v).unwrap())
                } else {
                    (n.clone(), bytes.clone())
                }
            })
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "draws.csv",
            "manifest.json",
            "mse_table.csv",
            "mse_table.json",
            "scenarios.json"
        ]
    );

    let c = tmp.path().join("c");
    let o = spikein(&[
        "simulate",
        "--scenario",
        &scenario,
        "--seed",
        "8",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(c.join("mse_table.csv")).unwrap(), a[2].1);
}

#[test]
fn manifest_hashes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path());
    let out = tmp.path().join("run");
    let o = spikein(&[
        "simulate",
        "--scenario",
        &scenario,
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "simulate");
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert_eq!(artifacts.len(), 3);
    for (name, hash) in artifacts {
        use sha2::Digest;
        let digest = hex::encode(sha2::Sha256::digest(fs::read(out.join(name)).unwrap()));
        assert_eq!(hash.as_str().unwrap(), digest, "{name}");
    }
}

#[test]
fn report_matches_the_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(
        code(&spikein(&[
            "simulate",
            "--scenario",
            &scenario,
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let o = spikein(&["report", "--in", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["row", "enroll", "odb", "rct", "spiked", "dynamic"]);
    assert_eq!(lines.len(), 3);
    let widths: Vec<usize> = lines.iter().map(|l| l.len()).collect();
    assert!(widths.iter().all(|w| *w == widths[0]), "columns are aligned");

    let mut rdr = csv::Reader::from_path(out.join("mse_table.csv")).unwrap();
    let records: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2 * 4);
    for rec in &records {
        let line = lines[1..]
            .iter()
            .find(|l| l.split_whitespace().next() == Some(&rec[0]))
            .expect("row rendered");
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells[1], &rec[1]);
        let col = header.iter().position(|h| *h == &rec[2]).unwrap();
        let v: f64 = rec[3].parse().unwrap();
        assert_eq!(format!("{v:.4}"), cells[col], "{} {}", &rec[0], &rec[2]);
    }
}

const NO_PROPENSITY: &str = "id,source,w,y,x1\n\
o1,odb,1,2.0,0.1\n\
o2,odb,0,1.0,0.4\n\
o3,odb,1,1.5,-0.3\n\
o4,odb,0,0.5,0.8\n\
r1,rct,1,2.5,0.2\n\
r2,rct,0,1.0,-0.1\n";

#[test]
fn missing_propensity_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(&data, NO_PROPENSITY).unwrap();
    let o = spikein(&[
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("propensity") && err.contains("fit-propensity"), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(code(&spikein(&["estimate", "--no-such-flag"])), 1);
    assert_eq!(
        code(&spikein(&["simulate", "--grid", "ideal", "--out", out])),
        1,
        "seed is mandatory"
    );
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[report]\nin-dir = \"x\"\n").unwrap();
    assert_eq!(
        code(&spikein(&["--config", cfg.to_str().unwrap(), "report", "--in", out])),
        1
    );
    fs::write(&cfg, "[estimat]\nk = 3\n").unwrap();
    assert_eq!(
        code(&spikein(&["--config", cfg.to_str().unwrap(), "report", "--in", out])),
        1
    );
    assert_eq!(code(&spikein(&["--help"])), 0);
}

#[test]
fn fitted_scores_feed_estimation_and_flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("id,source,w,y,x1,x2\n");
    // Deterministic confounded data: treatment more likely for large x1.
    for i in 0..300 {
        let x1 = ((i * 37) % 100) as f64 / 25.0 - 2.0;
        let x2 = ((i * 53) % 100) as f64 / 50.0 - 1.0;
        let w = (i * 7919) % 100 < (50.0 + 20.0 * x1) as usize;
        let y = 1.0 + x1 + 0.5 * x2 + if w { 1.0 } else { 0.0 };
        text += &format!("o{i},odb,{},{y},{x1},{x2}\n", u8::from(w));
    }
    for i in 0..60 {
        let x1 = ((i * 41) % 100) as f64 / 25.0 - 2.0;
        let x2 = ((i * 17) % 100) as f64 / 50.0 - 1.0;
        let w = i % 2 == 0;
        let y = 1.0 + x1 + 0.5 * x2 + if w { 1.0 } else { 0.0 };
        text += &format!("r{i},rct,{},{y},{x1},{x2}\n", u8::from(w));
    }
    let data = tmp.path().join("d.csv");
    fs::write(&data, text).unwrap();
    let fit = tmp.path().join("fit");
    let o = spikein(&[
        "fit-propensity",
        "--data",
        data.to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
        "--folds",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.json", "scored.csv", "manifest.json"] {
        assert!(fit.join(f).exists(), "{f}");
    }

    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "threads = 2\n[estimate]\nk = 4\nmethods = [\"odb\", \"spiked\"]\n",
    )
    .unwrap();
    let est = tmp.path().join("est");
    let scored = fit.join("scored.csv");
    let o = spikein(&[
        "--config",
        cfg.to_str().unwrap(),
        "estimate",
        "--data",
        scored.to_str().unwrap(),
        "--out",
        est.to_str().unwrap(),
        "--k",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(est.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["k"], 5);
    assert_eq!(manifest["config"]["methods"], serde_json::json!(["odb", "spiked"]));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(est.join("estimate.json")).unwrap()).unwrap();
    let spiked = report["methods"][1]["tau_hat"].as_f64().unwrap();
    assert!((spiked - 1.0).abs() < 0.5, "spiked estimate {spiked}");
}
