use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn siqrng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siqrng"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_session_produces_bits() {
    let dir = tempfile::tempdir().unwrap();
    let bits = dir.path().join("bits.bin");
    let log = dir.path().join("log.csv");
    let o = siqrng(&["run", "--out", path_str(&bits), "--log", path_str(&log)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::metadata(&bits).unwrap().len() > 0);
    let log = fs::read_to_string(&log).unwrap();
    assert_eq!(log.lines().count(), 101);
    assert!(log.lines().skip(1).all(|l| l.contains(",false,")));
    assert!(stdout(&o).contains("aborted 0"));
}

#[test]
fn single_block_emits_nothing() {
    let o = siqrng(&["run", "--set", "blocks=1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("secure bits 0 "));
}

#[test]
fn tiny_range_aborts_on_saturation() {
    let o = siqrng(&["run", "--set", "detector.range=0.1", "--blocks", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("saturation"));
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(siqrng(&["run", "--set", "bogus=1"]).status.code(), Some(1));
    assert_eq!(siqrng(&["run", "--set", "m=1000"]).status.code(), Some(1));
    assert_eq!(siqrng(&["run", "--config", "/nonexistent/cfg"]).status.code(), Some(1));
    assert_eq!(siqrng(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(siqrng(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# thermal source\nsource = thermal:2\nblocks = 5\nn = 4000\n").unwrap();
    let o = siqrng(&["run", "--config", path_str(&cfg), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("blocks 5"));
}

#[test]
fn selftest_passes() {
    let o = siqrng(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn theory_csv() {
    let o = siqrng(&[
        "theory",
        "--source",
        "vacuum",
        "--source",
        "squeezed:5:0",
        "--delta-range",
        "0.01:0.1:4",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 8);
    assert!(text.starts_with("source,v_check,v_data,delta,h_min_q,h_max_p,h_low_p,c"));
}

#[test]
fn sweeps_are_deterministic() {
    let args = ["bias-sim", "--n", "500", "--repetitions", "5", "--estimators", "freq,evb", "--seed", "9"];
    let (a, b) = (siqrng(&args), siqrng(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 3);

    let nine = ["ninebin", "--n", "20", "--repetitions", "10", "--seed", "2"];
    let (a, b) = (siqrng(&nine), siqrng(&nine));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 1 + 3 * 4);
}

#[test]
fn ninebin_custom_pmf_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ramp.txt");
    fs::write(&p, "1 2 3 4 5 6 7 8 9\n").unwrap();
    let o = siqrng(&["ninebin", "--no-builtin", "--pmf-file", path_str(&p), "--n", "50", "--repetitions", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().skip(1).all(|l| l.starts_with("ramp,")));
    fs::write(&p, "1 2 3\n").unwrap();
    let o = siqrng(&["ninebin", "--no-builtin", "--pmf-file", path_str(&p)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn export_and_test_bits() {
    let dir = tempfile::tempdir().unwrap();
    let bits = dir.path().join("bits.bin");
    let txt = dir.path().join("bits.txt");
    let o = siqrng(&["run", "--blocks", "6", "--out", path_str(&bits)]);
    assert_eq!(o.status.code(), Some(0));
    let o = siqrng(&["nist-export", "--input", path_str(&bits), "--out", path_str(&txt)]);
    assert_eq!(o.status.code(), Some(0));
    let ascii = fs::read_to_string(&txt).unwrap();
    assert_eq!(ascii.len() as u64, fs::metadata(&bits).unwrap().len() * 8);
    assert!(ascii.bytes().all(|c| c == b'0' || c == b'1'));

    let o = siqrng(&["nist-test", "--input", path_str(&txt), "--input-ascii", "--sample-bits", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("sample,test,p_value,pass"));
}
