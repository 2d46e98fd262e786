#![no_main]

use libfuzzer_sys::fuzz_target;
use tfp_core::reference::ReferenceSolution;

fuzz_target!(|data: &[u8]| {
    if let Ok(solution) = ReferenceSolution::decode(data) {
        let bytes = solution.encode();
        let again = ReferenceSolution::decode(&bytes).expect("re-encoded solution decodes");
        assert_eq!(again.encode(), bytes);
    }
});
