//! Fuzzes the model file loader: accepted documents must re-serialize to a
//! stable canonical form.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = liefield::specfile::spec_from_str(text) {
            let canonical = liefield::specfile::spec_to_string(&model).expect("serializes");
            let back = liefield::specfile::spec_from_str(&canonical).expect("round trips");
            let again = liefield::specfile::spec_to_string(&back).expect("serializes");
            assert_eq!(canonical, again);
        }
    }
});
