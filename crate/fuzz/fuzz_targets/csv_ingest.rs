#![no_main]

use cbmed::data::{ColumnMapping, Dataset, TreatmentKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mapping = ColumnMapping {
        y: "y".into(),
        t: "t".into(),
        m: vec!["m".into()],
        x: vec!["x".into()],
    };
    // any parse outcome is fine; the parser must not panic or hang
    let _ = Dataset::from_csv_reader(data, &mapping, TreatmentKind::Continuous);
    let _ = Dataset::from_csv_reader(data, &mapping, TreatmentKind::Discrete { levels: vec![] });
});
