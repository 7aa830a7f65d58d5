use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const GROUND: &str =
    "kind = \"ground\"\nd_km = 20\nmu_hz = 1e9\nf0 = 0.9\nt2_s = 1e-3\nn_steps = 1\nseed = 5\ntrials_min = 300\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_optipur"))
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_prints_all_protocols_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "g.toml", GROUND);
    let a = run(&["simulate", s(&cfg)]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    for name in ["NOP", "BASE", "HOPT", "OPT"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{text}");
    }
    let b = run(&["simulate", s(&cfg)]);
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["simulate", s(&cfg), "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn missing_key_is_a_validation_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let text: String = GROUND
        .lines()
        .filter(|l| !l.starts_with("f0"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = write(&dir, "bad.toml", &text);
    let out = run(&["simulate", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`f0`"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "x.toml"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_flags_and_paths() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "g.toml", GROUND);
    assert_eq!(run(&["simulate", s(&cfg), "--trials-min", "10"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", s(&cfg), "--threads", "0"]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["simulate", s(&missing)]).status.code(), Some(3));
    let sweep = write(
        &dir,
        "s.toml",
        &format!("{GROUND}[[sweep.axis]]\nname = \"f0\"\nvalues = [0.9]\n"),
    );
    let out = dir.path().join("no_such_dir").join("out.csv");
    assert_eq!(run(&["sweep", s(&sweep), "--out", s(&out)]).status.code(), Some(3));
}

#[test]
fn sweep_csv_layout() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "s.toml",
        &format!("{GROUND}[[sweep.axis]]\nname = \"n_steps\"\nvalues = [0, 1, 2]\n"),
    );
    let out = dir.path().join("out.csv");
    let r = run(&["sweep", s(&cfg), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("protocol,f0,t2_s,mu_hz,d_km,n_steps,fidelity,fidelity_ci,rate,rate_ci,skr,n_trials")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 12);
    let order: Vec<(&str, &str)> = rows.iter().map(|r| (r[5], r[0])).collect();
    assert_eq!(
        &order[..5],
        &[("0", "NOP"), ("0", "BASE"), ("0", "HOPT"), ("0", "OPT"), ("1", "NOP")]
    );
    for r in &rows {
        assert_eq!(r.len(), 12);
        let f: f64 = r[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&f));
        assert!(r[11].parse::<usize>().unwrap() >= 300);
    }
    // OPT's fidelity does not drop with more steps at this operating point.
    let opt: Vec<f64> = rows
        .iter()
        .filter(|r| r[0] == "OPT")
        .map(|r| r[6].parse().unwrap())
        .collect();
    assert!(opt.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{opt:?}");
}

#[test]
fn protocol_subset_reproduces_shared_rows() {
    let dir = TempDir::new().unwrap();
    let axis = "[[sweep.axis]]\nname = \"t2_s\"\nvalues = [1e-3, 1e-2]\n";
    let all = write(&dir, "all.toml", &format!("{GROUND}{axis}"));
    let sub = write(
        &dir,
        "sub.toml",
        &format!("protocols = [\"OPT\", \"BASE\"]\n{GROUND}{axis}"),
    );
    let (oa, ob) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(run(&["sweep", s(&all), "--out", s(&oa)]).status.success());
    assert!(run(&["sweep", s(&sub), "--out", s(&ob)]).status.success());
    let a = std::fs::read_to_string(oa).unwrap();
    let b = std::fs::read_to_string(ob).unwrap();
    let pick = |t: &str, p: &str| -> Vec<String> { t.lines().filter(|l| l.starts_with(p)).map(String::from).collect() };
    for p in ["OPT,", "BASE,"] {
        assert_eq!(pick(&a, p), pick(&b, p));
    }
    assert!(pick(&b, "NOP,").is_empty());
}

#[test]
fn heatmap_marks_hopeless_cells() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "h.toml",
        "kind = \"ground\"\nd_km = 20\nmu_hz = 1e3\nf0 = 0.9\nt2_s = 1e-3\ntrials_min = 200\nseed = 3\n\
         [heatmap]\nf0 = [0.6, 0.95]\nt2_s = [1e-4]\nsteps = [1]\n",
    );
    let out = dir.path().join("h.csv");
    let r = run(&["heatmap", s(&cfg), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "f0,t2_s,best_protocol,best_skr,skr_nop,skr_base,skr_hopt,skr_opt"
    );
    assert_eq!(lines.len(), 3);
    let low: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&low[..4], &["0.6", "0.0001", "N/A", "0"]);
    let high: Vec<&str> = lines[2].split(',').collect();
    let best: f64 = high[3].parse().unwrap();
    let max = high[4..].iter().map(|v| v.parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert_eq!(best, max);
    assert!(best > 0.0);
}

#[test]
fn heatmap_requires_its_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "g.toml", GROUND);
    let out = dir.path().join("h.csv");
    let r = run(&["heatmap", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("heatmap"));
}

#[test]
fn events_log_and_circuit_configs() {
    let dir = TempDir::new().unwrap();
    let circ = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../circuits/five_pair_three_memory.circ");
    let cfg = write(
        &dir,
        "c.toml",
        &format!(
            "kind = \"ground\"\nd_km = 20\nmu_hz = 1e9\nf0 = 0.85\nt2_s = 1e-2\ncircuit = \"{}\"\nprotocols = [\"OPT\", \"BASE\"]\ntrials_min = 200\n",
            circ.display()
        ),
    );
    let log = dir.path().join("events.txt");
    let r = run(&["simulate", s(&cfg), "--events-log", s(&log)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.contains("# protocol OPT trial 0"));
    assert!(text.contains("# protocol BASE trial 0"));
    assert_eq!(text.matches(" deliver ").count(), 2, "{text}");
    assert!(String::from_utf8_lossy(&r.stdout).contains("circuit("));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            optipur::config::Config::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
