//! Strict JSON experiment-config parser: must never panic, and anything it
//! accepts must survive a serialize/parse roundtrip unchanged. Configs with
//! infinite floats (JSON overflow casts) are exempt from the roundtrip since
//! JSON cannot represent them.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = epr::experiment::parse_config(data) {
        let finite = cfg.lr.is_finite()
            && cfg.probe_lr.is_finite()
            && cfg.n_sc.is_finite()
            && cfg.lr_grid.iter().all(|lr| lr.is_finite());
        if finite {
            let bytes = serde_json::to_vec(&cfg).expect("accepted config serializes");
            let again = epr::experiment::parse_config(&bytes).expect("own output parses");
            assert_eq!(cfg, again);
        }
    }
});
