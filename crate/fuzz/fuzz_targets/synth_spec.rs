#![no_main]

use bwla::synth::SynthSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = SynthSpec::parse(text) {
            spec.validate().expect("parsed specs are valid");
        }
    }
});
