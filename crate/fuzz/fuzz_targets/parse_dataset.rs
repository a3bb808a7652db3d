#![no_main]

use glrt::ingest::{parse_dataset, ColumnSchema};
use libfuzzer_sys::fuzz_target;

// The first byte picks the transform options; the rest is the CSV text.
fuzz_target!(|data: &[u8]| {
    let Some((&flags, body)) = data.split_first() else {
        return;
    };
    let schema = ColumnSchema {
        response: "y".into(),
        covariates: vec!["a".into(), "b".into()],
        standardize: flags & 1 == 1,
        yeo_johnson_lambda: (flags & 2 == 2).then(|| f64::from(flags >> 2) / 16.0 - 4.0),
    };
    if let Ok(d) = parse_dataset(body, &schema) {
        assert_eq!(d.p(), 2);
        assert!(d.n() >= 3);
        assert!(d.x().iter().chain(d.y().iter()).all(|v| v.is_finite()));
    }
});
