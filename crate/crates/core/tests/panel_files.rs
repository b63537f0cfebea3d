use std::path::PathBuf;

use disca::panel::{load_panel_file, read_panel, symmetrise, write_panel};
use disca::Attribute;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn three_record_fixture_round_trips_bit_exactly() {
    let path = fixture("panel3.jsonl");
    let original = std::fs::read(&path).unwrap();
    let records = load_panel_file(&path).unwrap();
    assert_eq!(records.len(), 3);

    let mut written = Vec::new();
    write_panel(&mut written, &records).unwrap();
    assert_eq!(String::from_utf8(written.clone()).unwrap(), String::from_utf8(original).unwrap());

    let again = read_panel(written.as_slice()).unwrap();
    for (a, b) in records.iter().zip(&again) {
        assert_eq!(a.delta_base_ab.to_bits(), b.delta_base_ab.to_bits());
        assert_eq!(a.delta_base_ba.to_bits(), b.delta_base_ba.to_bits());
        for (p, q) in a.persona_gaps.iter().zip(&b.persona_gaps) {
            assert_eq!(p.persona_id, q.persona_id);
            assert_eq!(p.delta_ab.to_bits(), q.delta_ab.to_bits());
            assert_eq!(p.delta_ba.to_bits(), q.delta_ba.to_bits());
        }
    }
}

#[test]
fn fixture_contents() {
    let records = load_panel_file(fixture("panel3.jsonl")).unwrap();
    let ids: Vec<_> = records.iter().map(|r| r.scenario_id.as_str()).collect();
    assert_eq!(ids, ["sp-001", "ag-017", "ut-203"]);
    assert_eq!(records[1].attribute, Attribute::Age);
    assert_eq!(records[2].persona_gaps[0].delta_ba, -1.7976931348623157e308);

    let (base, personas) = symmetrise(&records[0], true);
    assert_eq!(base, 1.0);
    assert_eq!(personas, [0.5, 1.25, 0.125, -0.5]);
    let (base, personas) = symmetrise(&records[0], false);
    assert_eq!(base, 1.25);
    assert_eq!(personas, [0.8, 1.5, 0.3125, -0.4]);
}
