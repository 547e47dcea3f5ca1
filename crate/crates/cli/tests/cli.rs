//! End-to-end runs of the `t2smark` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use t2smark::rng::stream_from_u64;
use t2smark::{NoiseVector, WatermarkBits};
use t2smark_cli::noise_file;

fn t2smark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2smark"))
        .args(args)
        .output()
        .expect("spawn t2smark")
}

fn ok_json(args: &[&str]) -> Value {
    let out = t2smark(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn code(args: &[&str]) -> i32 {
    t2smark(args).status.code().expect("exit code")
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    fn key(&self, seed: u64) -> String {
        let k = self.s(&format!("key{seed}.hex"));
        ok_json(&["keygen", "--out", &k, "--seed", &seed.to_string()]);
        k
    }
}

fn payload_hex(seed: u64) -> String {
    WatermarkBits::random(&mut stream_from_u64(seed), 256)
        .to_hex()
        .unwrap()
}

#[test]
fn keygen_format_and_determinism() {
    let w = Work::new();
    let a = fs::read_to_string(w.key(1)).unwrap();
    assert_eq!(a.len(), 65);
    assert!(a.ends_with('\n'));
    assert!(a[..64].chars().all(|c| c.is_ascii_hexdigit()));
    let again = w.s("again.hex");
    ok_json(&["keygen", "--out", &again, "--seed", "1"]);
    assert_eq!(fs::read_to_string(&again).unwrap(), a);

    let r1 = w.s("r1.hex");
    let r2 = w.s("r2.hex");
    ok_json(&["keygen", "--out", &r1]);
    ok_json(&["keygen", "--out", &r2]);
    assert_ne!(fs::read(r1).unwrap(), fs::read(r2).unwrap());
}

#[test]
fn embed_extract_round_trip() {
    let w = Work::new();
    let key = w.key(2);
    let out = w.s("z.t2sn");
    let hex = payload_hex(3);
    let report = ok_json(&[
        "embed",
        "--key",
        &key,
        "--payload",
        &hex,
        "--seed",
        "4",
        "--out",
        &out,
    ]);
    assert_eq!(report["payload"], hex.as_str());
    assert_eq!(report["session_key"]["test_only"], true);
    assert_eq!(report["seed"], 4);
    assert_eq!(fs::metadata(&out).unwrap().len(), 12 + 8 * 16_384);

    let ext = ok_json(&[
        "extract",
        "--key",
        &key,
        "--input",
        &out,
        "--expected",
        &hex,
    ]);
    assert_eq!(ext["payload"], hex.as_str());
    assert_eq!(ext["bit_accuracy"], 1.0);
    assert_eq!(ext["session_key"]["value"], report["session_key"]["value"]);
}

#[test]
fn random_payload_seed_is_echoed_and_reusable() {
    let w = Work::new();
    let key = w.key(5);
    let a = w.s("a.t2sn");
    let report = ok_json(&["embed", "--key", &key, "--out", &a]);
    let seed = report["seed"].as_u64().unwrap().to_string();
    let b = w.s("b.t2sn");
    let again = ok_json(&["embed", "--key", &key, "--out", &b, "--seed", &seed]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    assert_eq!(report["payload"], again["payload"]);
}

#[test]
fn sd35_preset_file_size() {
    let w = Work::new();
    let key = w.key(6);
    let out = w.s("z.t2sn");
    ok_json(&[
        "embed", "--key", &key, "--seed", "1", "--out", &out, "--sd35",
    ]);
    assert_eq!(fs::metadata(&out).unwrap().len(), 12 + 8 * 65_536);
    let ext = ok_json(&["extract", "--key", &key, "--input", &out, "--sd35"]);
    assert_eq!(ext["params"]["stage2"]["n"], 49_152);
}

#[test]
fn unit_gain_attack_is_identity() {
    let w = Work::new();
    let key = w.key(7);
    let z = w.s("z.t2sn");
    let y = w.s("y.t2sn");
    ok_json(&["embed", "--key", &key, "--seed", "1", "--out", &z]);
    ok_json(&[
        "attack",
        "--input",
        &z,
        "--channel",
        "gain:1.0",
        "--seed",
        "2",
        "--out",
        &y,
    ]);
    assert_eq!(fs::read(z).unwrap(), fs::read(y).unwrap());
}

#[test]
fn composed_attack_applies_in_written_order() {
    let w = Work::new();
    let z = w.path("z.t2sn");
    let values: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0 - 5.0).collect();
    noise_file::write(&z, &NoiseVector::new(values).unwrap()).unwrap();
    let zs = z.to_str().unwrap();
    let y = w.s("y.t2sn");
    let report = ok_json(&[
        "attack",
        "--input",
        zs,
        "--channel",
        "awgn:1.0+flip:0.01",
        "--seed",
        "3",
        "--out",
        &y,
    ]);
    assert_eq!(report["channel"], "awgn:1+flip:0.01");

    let spec: t2smark::ChannelSpec = "awgn:1.0+flip:0.01".parse().unwrap();
    let expected = spec
        .apply(&noise_file::read(&z).unwrap(), &mut stream_from_u64(3))
        .unwrap();
    assert_eq!(noise_file::read(Path::new(&y)).unwrap(), expected);
}

#[test]
fn awgn_attack_gives_small_nonzero_ber() {
    let w = Work::new();
    let key = w.key(8);
    let mut errors = 0.0;
    for t in 0..40u64 {
        let z = w.s("z.t2sn");
        let y = w.s("y.t2sn");
        let hex = payload_hex(100 + t);
        ok_json(&[
            "embed",
            "--key",
            &key,
            "--payload",
            &hex,
            "--seed",
            &t.to_string(),
            "--out",
            &z,
        ]);
        ok_json(&[
            "attack",
            "--input",
            &z,
            "--channel",
            "awgn:2.0",
            "--seed",
            &t.to_string(),
            "--out",
            &y,
        ]);
        let ext = ok_json(&["extract", "--key", &key, "--input", &y, "--expected", &hex]);
        errors += 1.0 - ext["bit_accuracy"].as_f64().unwrap();
    }
    let ber = errors / 40.0;
    // Analytic stage-2 P_e ≈ 1.25e-3 over 10240 bits: expect ≈ 13 errors.
    assert!(ber > 0.0 && ber < 4e-3, "{ber}");
}

#[test]
fn detect_clean_and_zero_vectors() {
    let w = Work::new();
    let key = w.key(9);
    let z = w.s("z.t2sn");
    ok_json(&["embed", "--key", &key, "--seed", "1", "--out", &z]);
    let d = ok_json(&["detect", "--key", &key, "--input", &z, "--fpr", "1e-6"]);
    assert_eq!(d["watermarked"], true);
    assert_eq!(d["method"], "analytic");
    assert!(d["statistic"].as_f64().unwrap() > 2000.0);

    let zero = w.path("zero.t2sn");
    noise_file::write(&zero, &NoiseVector::zeros(16_384)).unwrap();
    let d = ok_json(&[
        "detect",
        "--key",
        &key,
        "--input",
        zero.to_str().unwrap(),
        "--fpr",
        "1e-3",
    ]);
    assert_eq!(d["statistic"], 0.0);
    assert_eq!(d["watermarked"], false);
}

#[test]
fn monte_carlo_calibration_is_seeded() {
    let args = [
        "calibrate",
        "--fpr",
        "1e-2",
        "--method",
        "monte_carlo",
        "--trials",
        "2000",
        "--seed",
        "5",
    ];
    let a = t2smark(&args);
    let b = t2smark(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let d = v["threshold"].as_f64().unwrap();
    assert!((190.0..240.0).contains(&d), "{d}");
}

#[test]
fn exit_codes() {
    let w = Work::new();
    let key = w.key(10);
    let z = w.s("z.t2sn");
    ok_json(&["embed", "--key", &key, "--seed", "1", "--out", &z]);

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["embed", "--help"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["nope"]), 1);
    assert_eq!(
        code(&[
            "embed",
            "--key",
            &key,
            "--payload",
            "xyz",
            "--out",
            &w.s("p")
        ]),
        1
    );
    assert_eq!(
        code(&[
            "embed",
            "--key",
            &key,
            "--payload",
            "ab",
            "--out",
            &w.s("p")
        ]),
        1
    );
    assert_eq!(
        code(&[
            "attack",
            "--input",
            &z,
            "--channel",
            "awgn:",
            "--out",
            &w.s("p")
        ]),
        1
    );
    assert_eq!(
        code(&["detect", "--key", &key, "--input", &z, "--fpr", "2"]),
        1
    );
    assert_eq!(
        code(&[
            "experiment",
            "capacity",
            "--out",
            &w.s("c.csv"),
            "--payload-bits-grid",
            "256,99999"
        ]),
        1
    );
    assert!(!w.path("c.csv").exists(), "grid validated before running");

    // Data errors: missing files, corrupt key, corrupt noise file, wrong dimension.
    assert_eq!(
        code(&["extract", "--key", &w.s("missing"), "--input", &z]),
        2
    );
    let bad_key = w.path("bad.hex");
    fs::write(&bad_key, "not hex\n").unwrap();
    assert_eq!(
        code(&["extract", "--key", bad_key.to_str().unwrap(), "--input", &z]),
        2
    );
    let bad_noise = w.path("bad.t2sn");
    fs::write(&bad_noise, b"T2SN\x01\x00\x00\x00").unwrap();
    assert_eq!(
        code(&[
            "extract",
            "--key",
            &key,
            "--input",
            bad_noise.to_str().unwrap()
        ]),
        2
    );
    assert_eq!(code(&["detect", "--key", &key, "--input", &z, "--sd35"]), 2);
}

#[test]
fn channel_errors_carry_position() {
    let w = Work::new();
    let key = w.key(11);
    let z = w.s("z.t2sn");
    ok_json(&["embed", "--key", &key, "--seed", "1", "--out", &z]);
    let out = t2smark(&[
        "attack",
        "--input",
        &z,
        "--channel",
        "awgn:1+bogus:2",
        "--out",
        &w.s("y"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('7'), "{err}");
}

#[test]
fn trace_register_and_match() {
    let w = Work::new();
    let db = w.s("ids.tsv");
    let key = w.key(12);
    let hexes: Vec<String> = (0..20).map(|i| payload_hex(200 + i)).collect();
    for (i, h) in hexes.iter().enumerate() {
        let r = ok_json(&[
            "trace",
            "register",
            "--db",
            &db,
            "--account",
            &format!("user{i:02}"),
            "--bits",
            h,
        ]);
        assert_eq!(r["records"], i as u64 + 1);
    }
    assert_eq!(
        code(&[
            "trace",
            "register",
            "--db",
            &db,
            "--account",
            "user03",
            "--bits",
            &hexes[0]
        ]),
        2
    );

    let m = ok_json(&["trace", "match", "--db", &db, "--bits", &hexes[7]]);
    assert_eq!(m["account_id"], "user07");
    assert_eq!(m["bit_accuracy"], 1.0);

    let z = w.s("z.t2sn");
    let y = w.s("y.t2sn");
    ok_json(&[
        "embed",
        "--key",
        &key,
        "--payload",
        &hexes[13],
        "--seed",
        "1",
        "--out",
        &z,
    ]);
    ok_json(&[
        "attack",
        "--input",
        &z,
        "--channel",
        "awgn:2.0",
        "--seed",
        "1",
        "--out",
        &y,
    ]);
    let m = ok_json(&["trace", "match", "--db", &db, "--key", &key, "--input", &y]);
    assert_eq!(m["account_id"], "user13");
    assert!(m["margin"].as_f64().unwrap() > 0.2);
}

#[test]
fn experiment_writes_csv_and_echoes_config() {
    let w = Work::new();
    let out = w.s("bep.csv");
    let report = ok_json(&[
        "experiment",
        "bep",
        "--out",
        &out,
        "--tau-grid",
        "0.67449",
        "--sigma",
        "2",
        "--seed",
        "3",
    ]);
    assert_eq!(report["rows"], 1);
    assert_eq!(report["config"]["seed"], 3);
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("version"), env!("CARGO_PKG_VERSION"));
    assert_eq!(col("seed"), "3");
    let pe: f64 = col("analytic_pe").parse().unwrap();
    assert_eq!(
        pe,
        t2smark::analytic_bep(12_288, 256, 0.67449, 2.0)
            .unwrap()
            .p_e
    );
}
