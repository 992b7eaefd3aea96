//! Compiles and runs a C program against the generated header and the shared library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "stratpg.h"

int main(void) {
    StratpgConfig *cfg = NULL;
    if (stratpg_config_preset("synthetic", &cfg) != STRATPG_STATUS_OK) return 10;
    const char *sets[] = {"learner.warmup=1", "learner.epochs=2", "synthetic.batch_size=40", "synthetic.eval_size=80"};
    for (int i = 0; i < 4; i++)
        if (stratpg_config_set(cfg, sets[i]) != STRATPG_STATUS_OK) return 11;
    StratpgRun *run = NULL;
    if (stratpg_run(cfg, "vanilla", 1, &run) != STRATPG_STATUS_OK) return 12;
    size_t n = 0;
    stratpg_run_len(run, &n);
    StratpgRecord rec;
    if (stratpg_run_record(run, n - 1, &rec) != STRATPG_STATUS_OK) return 13;
    printf("%zu %.17g\n", n, rec.policy_value);
    if (stratpg_run(cfg, "nonsense", 1, &run) != STRATPG_STATUS_INVALID_ARGUMENT) return 14;
    if (strlen(stratpg_last_error()) == 0) return 15;
    stratpg_run_free(run);
    stratpg_config_free(cfg);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib_dir = target_dir();
    assert!(lib_dir.join("libstratpg_ffi.so").is_file(), "shared library in {}", lib_dir.display());
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lstratpg_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    let mut parts = line.split_whitespace();
    assert_eq!(parts.next(), Some("2"));
    assert!(parts.next().unwrap().parse::<f64>().unwrap().is_finite());
}
