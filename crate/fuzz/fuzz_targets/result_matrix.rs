//! CSV result-matrix parser: must never panic, and accepted matrices must
//! roundtrip exactly through the matching writer.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = epr::metrics::parse_result_matrix(data) {
        let finite = rows.iter().flatten().all(|v| v.is_finite());
        if finite {
            let bytes = epr::metrics::matrix_to_csv(&rows).expect("accepted matrix serializes");
            let again = epr::metrics::parse_result_matrix(&bytes).expect("own output parses");
            assert_eq!(rows, again);
        }
    }
});
