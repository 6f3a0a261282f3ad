#![no_main]

use bwla::pipeline::BwlaConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = BwlaConfig::from_toml(text) {
        let again = BwlaConfig::from_toml(&cfg.to_toml().expect("valid config serializes"));
        assert!(again.is_ok());
    }
});
