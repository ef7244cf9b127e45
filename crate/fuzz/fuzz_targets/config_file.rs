#![no_main]

use cbmed_cli::ConfigFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = serde_json::from_str::<ConfigFile>(s) {
            // merging must be total on any parsed config
            let merged = ConfigFile::default().merged_over(cfg);
            let _ = serde_json::to_string(&merged);
        }
    }
});
