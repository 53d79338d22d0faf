//! Solution CSV files as read by `certify` and `simulate`.

#![no_main]

use bioconvex::pipeline::read_solution;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = read_solution(text) {
            assert_eq!(table.names.first().map(String::as_str), Some("step"));
            assert_eq!(table.names.len(), table.columns.len());
        }
    }
});
