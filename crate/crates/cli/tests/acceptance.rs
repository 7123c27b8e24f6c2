//! Runs the full reproduction suite twice and prints one PASS/FAIL line per
//! acceptance criterion. Criterion 10 also requires the two output
//! directories to be byte-identical.

use std::path::{Path, PathBuf};
use std::process::Command;

fn reproduce(dir: &Path) -> i32 {
    let _ = std::fs::remove_dir_all(dir);
    let out = Command::new(env!("CARGO_BIN_EXE_kp"))
        .args(["reproduce", "--seed", "7", "--out", dir.to_str().unwrap()])
        .output()
        .expect("kp runs");
    print!("{}", String::from_utf8_lossy(&out.stdout));
    eprint!("{}", String::from_utf8_lossy(&out.stderr));
    out.status.code().expect("exit code")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn acceptance() {
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let (first, second) = (base.join("run1"), base.join("run2"));
    let code1 = reproduce(&first);
    let code2 = reproduce(&second);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("reproduce.json")).unwrap()).unwrap();
    let criteria = report["criteria"].as_array().unwrap();
    assert_eq!(criteria.len(), 10);

    let identical = files(&first) == files(&second) && !files(&first).is_empty();
    let mut all = true;
    for c in criteria {
        let id = c["id"].as_u64().unwrap();
        let mut pass = c["pass"].as_bool().unwrap();
        if id == 10 {
            pass &= identical;
        }
        for check in c["checks"].as_array().unwrap() {
            if check["pass"] != true {
                println!("    failed: {} = {} {} {}", check["name"], check["value"], check["relation"], check["limit"]);
            }
        }
        println!("criterion {id}: {} {}", if pass { "PASS" } else { "FAIL" }, c["name"].as_str().unwrap());
        all &= pass;
    }
    if !identical {
        println!("    output directories differ between two runs with the same seed");
    }
    assert!(all, "some acceptance criteria failed");
    assert_eq!((code1, code2), (0, 0));
}
