#![no_main]

use cace_core::data::{parse_records, records_to_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_records(data) {
        // Anything accepted must survive a write/read cycle unchanged.
        let text = records_to_string(&records);
        let again = parse_records(text.as_bytes()).expect("re-reading written records");
        assert_eq!(records, again);
    }
});
