#![no_main]

use glrt::simlab::{method_from_name, parse_selector, ErrorLaw, Family, MethodDefaults};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_selector(s);
    let _ = s.parse::<Family>();
    if let Ok(e) = s.parse::<ErrorLaw>() {
        // Display and parse round-trip.
        assert_eq!(e.to_string().parse::<ErrorLaw>().unwrap(), e);
    }
    let _ = method_from_name(s, &MethodDefaults::default());
});
