#![no_main]

use cbmed::data::parse_grid_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(grid) = parse_grid_spec(s) {
            // accepted grids are small, finite, and ordered
            assert!(grid.len() <= 100_001);
            assert!(grid.iter().all(|v| v.is_finite()));
            assert!(grid.windows(2).all(|w| w[0] < w[1]));
        }
    }
});
