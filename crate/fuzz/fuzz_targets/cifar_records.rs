//! Binary image-record parser: must never panic, and accepted input must
//! hold in-range labels and exactly whole records.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = epr::data::parse_cifar_records(data) {
        assert_eq!(records.len() * epr::data::CIFAR_RECORD_LEN, data.len());
        for r in &records {
            assert!(r.fine_label < 100);
        }
    }
});
