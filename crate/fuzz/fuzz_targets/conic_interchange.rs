//! Plain-text conic programs: reading never panics, and writing an accepted
//! program gives text that reads back to the same program.

#![no_main]

use bioconvex::conic::{read_program, write_program};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(prog) = read_program(text) else {
        return;
    };
    let written = write_program(&prog);
    let again = read_program(&written).expect("written program reads back");
    assert_eq!(write_program(&again), written);
    assert_eq!((again.n_vars, again.n_eq(), again.n_cone_rows()), (prog.n_vars, prog.n_eq(), prog.n_cone_rows()));
});
