//! JSON snapshot-manifest parser: must never panic, and accepted manifests
//! must survive a serialize/parse roundtrip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = epr::experiment::parse_snapshot_manifest(data) {
        let bytes = serde_json::to_vec(&entries).expect("accepted manifest serializes");
        let again = epr::experiment::parse_snapshot_manifest(&bytes).expect("own output parses");
        assert_eq!(entries, again);
    }
});
