//! Operational behaviors of the binary that the acceptance criteria
//! don't pin: secret hygiene and the --no-stamp escape hatch.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use serde_json::json;
use tpsc_core::manifest::DatasetManifest;
use tpsc_core::mockstamp::MockStamper;

fn tpsc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tpsc"))
}

fn assert_ok(cmd: &mut Command, what: &str) {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{what} exited {}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn write_config(path: &Path, ds: &Path, url: &str, enabled: bool) {
    let body = json!({
        "dataset": {
            "dir": ds.display().to_string(),
            "location": "bench",
            "experiment": "cli test",
        },
        "sensors": [{
            "sensor_id": 1, "kind": "vibration", "unit": "bool", "model": "SW-420",
            "nominal_interval_us": 2_000,
            "mode": "simulated", "baseline": 0.2, "amplitude": 0.3,
            "noise_sd": 0.1, "period_s": 2.0, "seed": 5,
        }],
        "chunker": { "max_payload_bytes": 950, "time_window_s": 0 },
        "stamper": {
            "enabled": enabled, "url": url,
            "poll_interval_ms": 25, "backoff_base_ms": 15, "backoff_cap_ms": 120,
        },
    });
    fs::write(path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
}

/// --no-stamp must keep the recorder fully offline even when the config
/// points at a live service.
#[test]
fn no_stamp_never_contacts_the_service() {
    let mock = MockStamper::start(0, Duration::from_millis(20)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let config = tmp.path().join("config.json");
    write_config(&config, &ds, &mock.url(), true);

    assert_ok(
        tpsc()
            .args(["record", "-c"])
            .arg(&config)
            .args(["--duration", "0.2", "--no-stamp"])
            .env_remove("TPSC_API_KEY"),
        "record --no-stamp",
    );

    assert!(
        mock.received_hashes().is_empty(),
        "service saw submissions from a --no-stamp run"
    );
    assert!(
        !ds.join("proofs.jsonl").exists(),
        "a --no-stamp run should leave no proof store behind"
    );
    let manifest = DatasetManifest::load(&ds.join("manifest.json")).unwrap();
    assert_eq!(manifest.creator_key_id, "unstamped");
    assert!(!manifest.chunks.is_empty());
    mock.stop();
}

/// The API key must never reach the manifest, the proof store, or an
/// exported bundle; only its fingerprint may appear.
#[test]
fn key_material_stays_out_of_artifacts() {
    let key = "tpsc-hygiene-canary-3f9a";
    let mock = MockStamper::start(0, Duration::from_millis(20)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let config = tmp.path().join("config.json");
    write_config(&config, &ds, &mock.url(), true);

    assert_ok(
        tpsc()
            .args(["record", "-c"])
            .arg(&config)
            .args(["--duration", "0.2"])
            .env("TPSC_API_KEY", key),
        "record",
    );
    assert_ok(
        tpsc()
            .args(["finalize", "-c"])
            .arg(&config)
            .args(["--wait", "10"])
            .env("TPSC_API_KEY", key),
        "finalize",
    );
    let bundle = tmp.path().join("out.tar");
    assert_ok(tpsc().arg("export").arg(&ds).arg(&bundle), "export");

    let needle = key.as_bytes();
    for name in ["manifest.json", "proofs.jsonl"] {
        let bytes = fs::read(ds.join(name)).unwrap();
        assert!(
            !bytes.windows(needle.len()).any(|w| w == needle),
            "{name} contains the API key"
        );
    }
    let bytes = fs::read(&bundle).unwrap();
    assert!(
        !bytes.windows(needle.len()).any(|w| w == needle),
        "exported bundle contains the API key"
    );

    // What does appear is the fingerprint: the first 16 hex of the
    // key's digest, checked against an independent implementation.
    let manifest = DatasetManifest::load(&ds.join("manifest.json")).unwrap();
    assert_eq!(manifest.creator_key_id, refsha::sha256_hex(needle)[..16]);

    let ledger: BTreeSet<String> = mock.received_hashes().into_iter().collect();
    let mut expected: BTreeSet<String> =
        manifest.chunks.iter().map(|c| c.hash.clone()).collect();
    expected.insert(manifest.manifest_hash.clone().unwrap());
    assert_eq!(ledger, expected);
    mock.stop();
}
