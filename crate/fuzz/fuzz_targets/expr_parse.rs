//! Fuzzes the expression grammar: accepted inputs must survive a
//! simplify-print-reparse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Bounded input keeps recursive-descent depth within the stack.
    if data.len() > 4096 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(parsed) = liefield::expr::parse(text) {
            let simplified = parsed.simplify();
            let printed = simplified.print();
            let reparsed = liefield::expr::parse(&printed).expect("printed form reparses");
            assert_eq!(reparsed.simplify(), simplified);
        }
    }
});
