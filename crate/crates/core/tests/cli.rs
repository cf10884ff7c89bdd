//! Golden-file tests for the `mbw` binary. Set `MBW_UPDATE_GOLDEN=1` to
//! rewrite the expected outputs after an intentional change.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const QUICK: [&str; 8] = ["--chains", "2", "--warmup", "300", "--samples", "300", "--seed", "17"];

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn mbw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbw")).args(args).output().expect("run mbw")
}

fn check_golden(name: &str, args: &[&str]) {
    let out = mbw(args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let path = data("golden").join(name);
    if std::env::var_os("MBW_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &out.stdout).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
    assert_eq!(String::from_utf8_lossy(&out.stdout), expected, "{name} drifted from its golden copy");
}

fn fit_args<'a>(extra: &[&'a str], cohort: &'a str) -> Vec<&'a str> {
    let mut v = vec!["fit", cohort, "--test-id", "t0001"];
    v.extend_from_slice(extra);
    v.extend_from_slice(&QUICK);
    v
}

#[test]
fn golden_diffuse_fit() {
    let cohort = data("cohort.csv");
    check_golden("fit_diffuse.csv", &fit_args(&[], cohort.to_str().unwrap()));
}

#[test]
fn golden_informative_fit() {
    let (cohort, prior) = (data("cohort.csv"), data("prior.json"));
    let prior = format!("informative:{}", prior.display());
    check_golden("fit_informative.csv", &fit_args(&["--prior", &prior], cohort.to_str().unwrap()));
}

#[test]
fn golden_truncated_fit() {
    let (cohort, prior) = (data("cohort.csv"), data("prior.json"));
    let prior = format!("informative:{}", prior.display());
    check_golden(
        "fit_truncated.csv",
        &fit_args(&["--prior", &prior, "--truncate", "1/10"], cohort.to_str().unwrap()),
    );
}

#[test]
fn exit_codes() {
    assert_eq!(mbw(&["fit", "/nonexistent/tests.csv"]).status.code(), Some(1));
    assert_eq!(mbw(&["fit", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mbw(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "test_id,participant_id,replicate_id,k,gas,cevgm,cevtg\na,,,0,1.0,0,0\na,,,2,0.5,1,1\n").unwrap();
    let out = mbw(&["fit", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    // a handful of random-walk draws cannot pass the R-hat screen
    let cohort = data("cohort.csv");
    let out = mbw(&[
        "fit", cohort.to_str().unwrap(), "--test-id", "t0001", "--algorithm", "random-walk",
        "--chains", "4", "--warmup", "5", "--samples", "10", "--seed", "3",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stdout.is_empty());
}
