use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sram-margin-lab");

fn small_config() -> String {
    let mut cfg = sram_margin_lab::cli::ExperimentConfig::default();
    cfg.array.rows = 4;
    cfg.array.cols = 8;
    cfg.array.block_words = 2;
    cfg.cells.truncate(2);
    cfg.to_toml()
}

fn sram(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn default_config_round_trips_through_the_binary() {
    let out = sram(&["default-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = sram_margin_lab::cli::config::parse(&text).unwrap();
    assert_eq!(cfg, sram_margin_lab::cli::ExperimentConfig::default());
}

#[test]
fn wlvm_array_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, small_config()).unwrap();
    let first = dir.path().join("first");
    let out = sram(&[
        "wlvm-array",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--seed",
        "7",
        "--granularity",
        "word,memory",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = first.join("manifest.toml");
    let m = sram_margin_lab::cli::Manifest::load(&manifest).unwrap();
    assert_eq!(m.seed, 7);
    assert_eq!(m.cells, vec!["A".to_string()]);
    assert!(m.outputs.iter().any(|f| f.name == "A_records_word.csv"));
    assert!(m.outputs.iter().any(|f| f.name == "A_records_bit.csv"));

    let second = dir.path().join("second");
    let out = sram(&[
        "rerun",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in &m.outputs {
        assert_eq!(read(&first, &f.name), read(&second, &f.name), "{}", f.name);
    }
    assert_eq!(
        read(&first, "manifest.toml"),
        read(&second, "manifest.toml")
    );
}

#[test]
fn wnm_writes_one_row_per_cell_and_direction() {
    let dir = tempfile::tempdir().unwrap();
    let out = sram(&[
        "wnm",
        "--cells",
        "A,E",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut rd = csv::Reader::from_path(dir.path().join("wnm.csv")).unwrap();
    assert_eq!(rd.records().count(), 4);
}

#[test]
fn invalid_config_fails_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = small_config().replacen("w_tx_nm = 150.0", "w_tx_nm = 0.0", 1);
    std::fs::write(&cfg, text).unwrap();
    let out = sram(&["wnm", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("w_tx_nm"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_cell_and_granularity_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(!sram(&["wnm", "--cells", "Z", "--out", d]).status.success());
    assert!(!sram(&["wlvm-array", "--granularity", "page", "--out", d])
        .status
        .success());
}
