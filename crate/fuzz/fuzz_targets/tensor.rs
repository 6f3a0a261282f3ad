#![no_main]

use bwla::pipeline::Tensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Tensor::from_bytes(data) {
        // accepted input re-encodes to the same bytes
        assert_eq!(t.to_bytes(), data);
        let _ = t.to_matrix();
    }
});
