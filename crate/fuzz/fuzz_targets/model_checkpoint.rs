//! Binary checkpoint decoder: hostile headers and blobs must never panic or
//! over-allocate, and any accepted checkpoint must re-encode and decode to a
//! model with identical structure.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = epr::model::checkpoint::from_bytes(data) {
        let bytes = epr::model::checkpoint::to_bytes(&model).expect("accepted model encodes");
        let again = epr::model::checkpoint::from_bytes(&bytes).expect("own output decodes");
        assert_eq!(model.image_side, again.image_side);
        assert_eq!(model.channels, again.channels);
        assert_eq!(model.classes_per_task, again.classes_per_task);
        assert_eq!(model.num_tasks(), again.num_tasks());
        assert_eq!(model.param_count(), again.param_count());
    }
});
