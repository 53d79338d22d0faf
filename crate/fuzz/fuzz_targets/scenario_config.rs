//! Scenario TOML: loading never panics, and an accepted scenario survives a
//! write and reload.

#![no_main]

use std::path::Path;

use bioconvex::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(sc) = Scenario::from_toml(text, Path::new(".")) else {
        return;
    };
    let emitted = sc.to_toml().expect("a loaded scenario keeps its config");
    let again = Scenario::from_toml(&emitted, Path::new(".")).expect("emitted scenario reloads");
    assert_eq!(again.steps(), sc.steps());
    assert_eq!(again.n_tanks(), sc.n_tanks());
});
