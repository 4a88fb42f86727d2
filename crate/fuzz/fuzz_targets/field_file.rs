//! Fuzzes the field file loader: accepted configurations must re-serialize
//! and re-load cleanly.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(field) = liefield::specfile::field_from_str(text) {
            let canonical = liefield::specfile::field_to_string(&field).expect("serializes");
            liefield::specfile::field_from_str(&canonical).expect("round trips");
        }
    }
});
