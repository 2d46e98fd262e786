#![no_main]

use libfuzzer_sys::fuzz_target;
use tfp_core::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = parse_config(text) else { return };
    // Whatever parses must survive its canonical rendering unchanged.
    let again = parse_config(&config.render()).expect("rendered config parses");
    assert_eq!(again, config);
    assert_eq!(again.fingerprint(), config.fingerprint());
    let _ = config.validate();
});
