#![no_main]

use bwla::kernel::full_inference;
use bwla::pipeline::Artifact;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = Artifact::from_bytes(data) {
        let bytes = a.to_bytes().expect("loaded artifacts re-encode");
        assert_eq!(Artifact::from_bytes(&bytes).expect("re-encoded artifact loads"), a);
        if a.layer.cols() <= 1 << 12 && a.layer.rows() <= 1 << 12 {
            let _ = full_inference(&a.layer, &vec![1.0; a.layer.cols()]);
        }
    }
});
