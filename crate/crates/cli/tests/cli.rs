use std::path::Path;
use std::process::{Command, Output};

use nsaga::bench::{read_trace, RunConfig};
use nsaga::theory::{gamma_star, k_param};

fn nsaga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsaga"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn attr<'a>(tag: &'a str, name: &str) -> &'a str {
    let key = format!(" {name}=\"");
    let start = tag
        .find(&key)
        .unwrap_or_else(|| panic!("no {name} in {tag}"))
        + key.len();
    let len = tag[start..].find('"').unwrap();
    &tag[start..start + len]
}

/// `(algorithm, xs, ys, pixel point count)` for every curve in the chart.
fn curves(svg: &str) -> Vec<(String, Vec<f64>, Vec<f64>, usize)> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline class=\"curve\""))
        .map(|l| {
            let nums = |s: &str| {
                s.split_whitespace()
                    .map(|v| v.parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            };
            let alg = attr(l, "data-algorithm")
                .replace("&amp;", "&")
                .replace("&quot;", "\"");
            (
                alg,
                nums(attr(l, "data-x")),
                nums(attr(l, "data-y")),
                attr(l, "points").split_whitespace().count(),
            )
        })
        .collect()
}

fn assert_chart_matches_csv(svg: &Path, csv: &Path, gradient_axis: bool) {
    let svg = std::fs::read_to_string(svg).unwrap();
    let trace = read_trace(csv).unwrap();
    let drawn = curves(&svg);
    assert_eq!(drawn.len(), trace.algorithms().len());
    for (alg, xs, ys, npix) in drawn {
        let agg = trace.curve(&alg);
        assert!(!agg.is_empty(), "chart curve {alg} not in CSV");
        let want_x: Vec<f64> = agg
            .iter()
            .map(|p| {
                if gradient_axis {
                    p.mean_gradient_evals
                } else {
                    p.datapoint_evals as f64
                }
            })
            .collect();
        let want_y: Vec<f64> = agg.iter().map(|p| p.mean).collect();
        assert_eq!(xs, want_x, "{alg}");
        assert_eq!(ys, want_y, "{alg}");
        assert_eq!(npix, agg.len());
    }
}

#[test]
fn rates_prints_k_and_gamma_star() {
    let out = nsaga(&[
        "rates", "--n", "100000", "--mu", "1e-3", "--L", "1", "--q", "20",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("K               8.000000e-1"), "{text}");
    let k = k_param(20, 100_000, 1e-3, 1.0).unwrap();
    assert!((k - 0.8).abs() < 1e-12);
    let gs = format!("{:.6e}", gamma_star(k, 1.0).unwrap());
    assert!(
        text.contains(&format!("gamma_star      {gs}")),
        "{text} / {gs}"
    );
}

#[test]
fn run_is_deterministic_and_echoes_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    std::fs::write(&cfg, "dataset.n = 300\ndataset.d = 5\nepochs = 2\nseeds = 0,1\nalgorithm.kind = q_saga\nalgorithm.q = 4\n")
        .unwrap();
    let mut bytes = Vec::new();
    for rep in ["a", "b"] {
        let out_dir = dir.path().join(rep);
        let out = nsaga(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "epochs=3",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        bytes.push(std::fs::read(out_dir.join("trace.csv")).unwrap());
        let echoed =
            RunConfig::parse(&std::fs::read_to_string(out_dir.join("config.txt")).unwrap())
                .unwrap();
        assert_eq!(echoed.epochs, 3.0, "flag overrides file");
        assert_eq!(echoed.algorithm.q, 4, "file overrides defaults");
        assert_eq!(echoed.seeds, vec![0, 1]);
        assert_chart_matches_csv(
            &out_dir.join("chart.svg"),
            &out_dir.join("trace.csv"),
            false,
        );
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn chart_on_gradient_axis_is_a_view_of_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsaga(&[
        "run",
        "--set",
        "dataset.n=200",
        "--set",
        "algorithm.kind=svrg",
        "--set",
        "algorithm.q=5",
        "--set",
        "gamma.rule=theory_universal",
        "--set",
        "epochs=2",
        "--x",
        "gradient_evals",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_chart_matches_csv(
        &dir.path().join("chart.svg"),
        &dir.path().join("trace.csv"),
        true,
    );
}

#[test]
fn exit_codes_follow_the_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let out = nsaga(&["run", "--set", "dataset.bogus=1", "--out", &d("a")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dataset.bogus"));

    let out = nsaga(&["run", "--set", "epochs", "--out", &d("b")]);
    assert_eq!(code(&out), 1);

    let missing = d("nope.conf");
    let out = nsaga(&["run", "--config", &missing, "--out", &d("c")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.conf"));

    let bad_cfg = d("bad.conf");
    std::fs::write(&bad_cfg, "mu = -3\n").unwrap();
    let out = nsaga(&["run", "--config", &bad_cfg, "--out", &d("d")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("mu"));

    let data = d("missing.svm");
    let out = nsaga(&[
        "run",
        "--set",
        "dataset.kind=libsvm",
        "--set",
        &format!("dataset.path={data}"),
        "--out",
        &d("e"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.svm"));

    let garbage = d("garbage.svm");
    std::fs::write(&garbage, "1 1:0.5 2:oops\n").unwrap();
    let out = nsaga(&[
        "run",
        "--set",
        "dataset.kind=libsvm",
        "--set",
        &format!("dataset.path={garbage}"),
        "--out",
        &d("f"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("garbage.svm"));

    let out = nsaga(&[
        "run",
        "--set",
        "dataset.n=200",
        "--set",
        "gamma.rule=explicit",
        "--set",
        "gamma.value=10",
        "--set",
        "epochs=20",
        "--out",
        &d("g"),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
    assert!(
        dir.path().join("g/trace.csv").exists(),
        "artifacts are still written"
    );

    let out = nsaga(&[
        "neighbors",
        "--set",
        "dataset.n=50",
        "--q",
        "80",
        "--cache",
        &d("graphs"),
    ]);
    assert_eq!(code(&out), 1);

    let out = nsaga(&["rates", "--mu", "-1"]);
    assert_eq!(code(&out), 1);

    let out = nsaga(&["frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn neighbors_audits_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().to_str().unwrap();
    let args = [
        "neighbors",
        "--set",
        "dataset.n=120",
        "--set",
        "loss=logistic",
        "--q",
        "6",
        "--cache",
        cache,
    ];
    let first = nsaga(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    assert!(text.contains("in-degree 6: 120 nodes"), "{text}");
    assert!(text.contains("uniform"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let second = nsaga(&args);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn replicate_writes_two_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsaga(&[
        "replicate",
        "--subsample",
        "400",
        "--set",
        "epochs=2",
        "--set",
        "seeds=0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut total = 0;
    for mu in ["0.1", "0.001"] {
        let csv = dir.path().join(format!("trace-mu{mu}.csv"));
        for (axis, grad) in [("datapoint_evals", false), ("gradient_evals", true)] {
            let svg = dir.path().join(format!("chart-mu{mu}-{axis}.svg"));
            assert_chart_matches_csv(&svg, &csv, grad);
        }
        total += read_trace(&csv).unwrap().algorithms().len();
    }
    assert_eq!(total, 10);
    assert!(dir.path().join("cells.txt").exists());

    let sweep = dir.path().join("sweep");
    let out = nsaga(&[
        "replicate",
        "--subsample",
        "300",
        "--mu",
        "0.1",
        "--eps",
        "0.1,1",
        "--set",
        "epochs=1",
        "--set",
        "seeds=0",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        read_trace(sweep.join("trace-mu0.1.csv"))
            .unwrap()
            .algorithms()
            .len(),
        6
    );
}
