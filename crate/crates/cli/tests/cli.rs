use std::path::Path;
use std::process::{Command, Output};

use quenched_bp::restore::pnm::{self, PnmFormat};

fn qbp(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbp"))
        .args(args)
        .env("QBP_THREADS", threads)
        .output()
        .expect("qbp runs")
}

fn ok(args: &[&str]) -> Output {
    let out = qbp(args, "1");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

const SMALL_SWEEP: &[&str] = &[
    "sweep-quenched",
    "--width",
    "3",
    "--height",
    "3",
    "--values",
    "0.5,1.0",
    "--field-samples",
    "30",
    "--nodes",
    "16",
];

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.starts_with("ok")));
}

#[test]
fn sweep_csv_is_reproducible_across_thread_counts() {
    let a = qbp(SMALL_SWEEP, "1");
    let b = qbp(SMALL_SWEEP, "3");
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# sweep-quenched:"));
    assert!(lines[0].contains("seed = 1"));
    assert_eq!(lines[1], "sigma,f_rlbp,f_mc_mean,f_mc_std_error,n_excluded,m_rlbp,m_lbp_mean");
    assert_eq!(lines.len(), 4);
    let row: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 0.5);
    assert!(row[1].is_finite() && row[2].is_finite() && row[3] > 0.0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "width = 3\nheight = 3\nq = 3\nsweep = \"j\"\nvalues = [0.1]\nfield_samples = 5\nnodes = 8\n").unwrap();
    let csv = dir.path().join("out.csv");
    let cfg_s = cfg.to_string_lossy().into_owned();
    let csv_s = csv.to_string_lossy().into_owned();
    ok(&["sweep-quenched", "--config", &cfg_s, "--q", "2", "--output", &csv_s]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("q = 2;"), "{text}");
    assert!(text.contains("sweep = \"j\""));
    assert!(text.lines().nth(1).unwrap().starts_with("j,"));

    std::fs::write(&cfg, "widht = 3\n").unwrap();
    let out = qbp(&["sweep-quenched", "--config", &cfg_s], "1");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn strict_mode_reports_non_convergence() {
    let mut args = SMALL_SWEEP.to_vec();
    args.extend(["--max-iter", "1", "--j", "0.8"]);
    assert_eq!(qbp(&args, "1").status.code(), Some(0));
    args.push("--strict");
    let out = qbp(&args, "1");
    assert_eq!(out.status.code(), Some(2));
    // the table is still written
    assert!(String::from_utf8(out.stdout).unwrap().lines().count() == 4);
}

#[test]
fn meanfield_lists_every_branch() {
    let out = ok(&["meanfield", "--values", "0.5,2", "--sigma", "0", "--sizes", "20"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    let saddles = |beta: &str| rows.iter().filter(|r| r[0] == beta && r[2] == "saddle").count();
    assert_eq!(saddles("0.5"), 1);
    assert_eq!(saddles("2"), 3);
    let rlbp: Vec<&Vec<&str>> = rows.iter().filter(|r| r[2] == "rlbp").collect();
    assert_eq!(rlbp.len(), 2);
    assert!(rlbp.iter().all(|r| r[3] == "20" && r[6].parse::<f64>().unwrap() < 0.05));
}

#[test]
fn degrade_restore_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let original = data("synthetic64.ppm");
    ok(&["restore", "--mode", "degrade", "--input", &original, "--sigma", "0.5", "--seed", "7", "--output", &p("noisy.txt")]);
    ok(&["restore", "--mode", "restore", "--input", &p("noisy.txt"), "--sigma", "0.5", "--alpha", "0.4", "--output", &p("clean.ppm")]);
    let (restored, format) = pnm::read_image(Path::new(&p("clean.ppm")), 8).unwrap();
    assert_eq!(format, PnmFormat::Ascii);
    assert_eq!((restored.width(), restored.height(), restored.channels()), (64, 64, 3));

    let out = ok(&["restore", "--mode", "score", "--input", &p("clean.ppm"), "--reference", &original]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mse: f64 = text.lines().nth(2).unwrap().parse().unwrap();
    // sigma = 0.5 rounding alone gives about 0.32
    assert!(mse > 0.0 && mse < 0.3, "{mse}");
}

#[test]
fn dav_sweep_rows_follow_values() {
    let out = ok(&[
        "restore",
        "--mode",
        "mc",
        "--input",
        &data("synthetic64.pgm"),
        "--sweep",
        "alpha",
        "--values",
        "0,0.4",
        "--samples",
        "4",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "alpha,sigma,d_av_analytic,d_av_mc_mean,d_av_mc_std_error,n_excluded");
    assert!(lines[2].starts_with("0,0.5,"));
    assert!(lines[3].starts_with("0.4,0.5,"));
}
