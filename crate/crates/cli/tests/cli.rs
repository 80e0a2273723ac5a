use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sid"))
        .args(args)
        .env_remove("SID_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const QUAD: &str = r#"
[problem]
kind = "quadratic"
lambda = [1.0, 1.0]
noise = "additive"
noise_std = 0.1

[variant]
names = ["batch", "stoch_const", "stoch_dec"]

[budget]
epochs = 100
checkpoints = 6

[seeds]
replicates = 5
"#;

#[test]
fn run_writes_curves_and_overlay_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", QUAD);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let o = sid(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<String> = fs::read_dir(&out1)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "bounds_overlay.csv",
            "curve_batch.csv",
            "curve_stoch_const.csv",
            "curve_stoch_dec.csv",
            "runs.csv"
        ]
    );
    for n in &names {
        assert_eq!(fs::read(out1.join(n)).unwrap(), fs::read(out2.join(n)).unwrap(), "{n}");
    }
    assert_eq!(csv_rows(&out1.join("runs.csv")).len(), 3 * 5 * 6);
}

#[test]
fn seed_flag_and_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.toml",
        &QUAD.replace("[\"batch\", \"stoch_const\", \"stoch_dec\"]", "[\"stoch_dec\"]"),
    );
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_sid"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--seed", "9"])
        .env("SID_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let with_flag = fs::read(env_out.join("runs.csv")).unwrap();
    let other = dir.path().join("other");
    let o = sid(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        other.to_str().unwrap(),
        "--set",
        "seeds.master=9",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(other.join("runs.csv")).unwrap(), with_flag);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write(
        dir.path(),
        "m.toml",
        "[problem]\nkind = \"logistic\"\nlambda = [1.0]\ndata_format = \"csv\"\ndata_path = \"nowhere.csv\"\n",
    );
    let out = dir.path().join("o");
    let o = sid(&[
        "run",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));

    let bad_key = write(dir.path(), "k.toml", &format!("{QUAD}\n[output]\ndirr = \"x\"\n"));
    let o = sid(&["run", "--config", bad_key.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dirr"));

    let q = write(dir.path(), "q.toml", QUAD);
    let o = sid(&["run", "--config", q.to_str().unwrap(), "--set", "budget.epochz=3"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&sid(&["run", "--config", "/no/such/config.toml"])), 2);
    assert_eq!(code(&sid(&["frobnicate"])), 2);
    assert_eq!(code(&sid(&["run"])), 2);
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let q = write(dir.path(), "q.toml", QUAD);
    let blocker = write(dir.path(), "file", "");
    let o = sid(&[
        "run",
        "--config",
        q.to_str().unwrap(),
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

const BILEVEL: &str = r#"
[problem]
kind = "quadratic"
lambda = [0.5, 0.5]
noise = "additive"
noise_std = 0.1

[outer]
steps = 8
lr = 2.0
domain = "unconstrained"
estimator = "stoch_dec"
epochs_per_step = 20
"#;

fn trace(dir: &Path, name: &str, extra: &[&str]) -> Vec<Vec<f64>> {
    let cfg = write(dir, &format!("{name}.toml"), BILEVEL);
    let out = dir.join(name);
    let mut args = vec![
        "bilevel",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = sid(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    csv_rows(&out.join("trace.csv"))
        .into_iter()
        .map(|r| r.iter().map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn bilevel_traces() {
    let dir = tempfile::tempdir().unwrap();
    let frozen = trace(dir.path(), "frozen", &["--set", "outer.lr=0"]);
    assert!(frozen.iter().all(|r| r[1] == 0.5 && r[2] == 0.5));

    let cold = trace(dir.path(), "cold", &["--set", "outer.warm_start=false"]);
    let warm = trace(dir.path(), "warm", &["--set", "outer.warm_start=true"]);
    // columns: step, λ₀, λ₁, f, g₀, g₁, epochs, accuracy
    assert_eq!(cold[0][4..6], warm[0][4..6]);

    let oracle = trace(
        dir.path(),
        "oracle",
        &[
            "--set",
            "outer.estimator=oracle",
            "--set",
            "outer.steps=50",
            "--set",
            "outer.lr=3.0",
        ],
    );
    assert_eq!(oracle.len(), 50);
    assert!(oracle.windows(2).all(|w| w[1][3] <= w[0][3]));

    let cfg = write(dir.path(), "blow.toml", BILEVEL);
    let o = sid(&[
        "bilevel",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("blow").to_str().unwrap(),
        "--set",
        "outer.estimator=oracle",
        "--set",
        "outer.lr=1e308",
        "--set",
        "outer.steps=100",
    ]);
    assert_eq!(code(&o), 1);
    assert!(dir.path().join("blow/trace.csv").exists());
}

#[test]
fn bounds_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.toml",
        "[problem]\nkind = \"quadratic\"\nlambda = [1.0, 1.0]\nnoise = \"additive\"\nnoise_std = 0.1\n\
         [bounds]\nt = [10.0, 100.0, 1000.0]\nk = [10.0, 100.0, 1000.0]\n",
    );
    let out = dir.path().join("b");
    let o = sid(&[
        "bounds",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(text.starts_with("t,k,rho,sigma,bias,var_inner,var_outer,total,floor,indicative"));
    let rows = csv_rows(&out.join("bounds.csv"));
    assert!(rows
        .iter()
        .all(|r| r[8].parse::<f64>().unwrap() == 0.0 && r[9] == "false"));
    let total: Vec<f64> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    assert!(total.windows(2).all(|w| w[1] < w[0]));

    let o = sid(&[
        "bounds",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "constants.estimated=[\"nu2\"]",
    ]);
    assert_eq!(code(&o), 0);
    assert!(csv_rows(&out.join("bounds.csv")).iter().all(|r| r[9] == "true"));

    let o = sid(&["bounds", "--config", cfg.to_str().unwrap(), "--set", "constants.q=1.0"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn convert_round_trips_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let images = repo_path("data/mnist-subset/images-idx3-ubyte");
    let labels = repo_path("data/mnist-subset/labels-idx1-ubyte");
    let csv = dir.path().join("m.csv");
    let o = sid(&[
        "convert",
        "--from",
        "idx",
        "--input",
        images.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (img2, lab2) = (dir.path().join("i"), dir.path().join("l"));
    let o = sid(&[
        "convert",
        "--from",
        "csv",
        "--to",
        "idx",
        "--input",
        csv.to_str().unwrap(),
        "--output",
        img2.to_str().unwrap(),
        "--output-labels",
        lab2.to_str().unwrap(),
        "--pixel-scale",
        "255",
        "--image-shape",
        "28x28",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&images).unwrap(), fs::read(&img2).unwrap());
    assert_eq!(fs::read(&labels).unwrap(), fs::read(&lab2).unwrap());

    let bad = write(dir.path(), "bad.svm", "1 1:0.5\n-1 x:3\n");
    let o = sid(&[
        "convert",
        "--from",
        "libsvm",
        "--input",
        bad.to_str().unwrap(),
        "--output",
        "/dev/null",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let with = write(dir.path(), "h.csv", "label,a,b\n1,0.5,2\n-1,3,4.25\n");
    let without = write(dir.path(), "n.csv", "1,0.5,2\n-1,3,4.25\n");
    let (o1, o2) = (dir.path().join("o1.csv"), dir.path().join("o2.csv"));
    for (i, o) in [(&with, &o1), (&without, &o2)] {
        let r = sid(&[
            "convert",
            "--from",
            "csv",
            "--input",
            i.to_str().unwrap(),
            "--output",
            o.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0);
    }
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
}
