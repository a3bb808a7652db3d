#![no_main]

use glrt::simlab::ExperimentGrid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(grid) = ExperimentGrid::from_toml_str(text) {
            // Accepted grids must expand without error.
            grid.cells().unwrap();
            grid.named_methods().unwrap();
        }
    }
});
