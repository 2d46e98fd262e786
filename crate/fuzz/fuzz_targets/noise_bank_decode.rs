#![no_main]

use libfuzzer_sys::fuzz_target;
use tfp_core::noise::NoiseBank;

fuzz_target!(|data: &[u8]| {
    if let Ok(bank) = NoiseBank::decode(data) {
        let bytes = bank.encode();
        assert_eq!(NoiseBank::decode(&bytes).expect("re-encoded bank decodes"), bank);
    }
});
