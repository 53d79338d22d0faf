//! Influent CSV tables: reading never panics, and a table that reads back
//! is a fixed point of write then read.

#![no_main]

use bioconvex::scenario::influent::{read_table, write_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(table) = read_table(text) else {
        return;
    };
    let written = write_table(&table);
    let again = read_table(&written).expect("written table reads back");
    assert_eq!(again.names, table.names);
    assert_eq!(write_table(&again), written);
});
