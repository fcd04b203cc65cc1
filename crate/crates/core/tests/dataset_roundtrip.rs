use std::fs;
use std::path::PathBuf;

use goldsel::dataset::{
    load_dataset, ExampleId, Flag, Format, InstructionExample, LoadOptions, PromptTemplate, Role,
};
use goldsel::scoring::GoldenScoreTable;
use goldsel::selection::{export_subset, top_fraction};
use goldsel::Fingerprint;
use proptest::prelude::*;
use serde_json::Value;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/alpaca_schema.json")
}

fn records(path: &std::path::Path, format: Format) -> Vec<Value> {
    let text = fs::read_to_string(path).unwrap();
    match format {
        Format::JsonArray => serde_json::from_str(&text).unwrap(),
        Format::Jsonl => text.lines().map(|l| serde_json::from_str(l).unwrap()).collect(),
    }
}

#[test]
fn fixture_flags() {
    let ds = load_dataset(&fixture(), Format::JsonArray, &LoadOptions::default()).unwrap();
    assert_eq!(ds.len(), 7);
    let flagged: Vec<_> = ds
        .examples()
        .iter()
        .filter(|e| e.has_flag(Flag::EmptyOutput))
        .map(|e| e.id.as_str())
        .collect();
    assert_eq!(flagged, ["2", "6"]);
}

#[test]
fn export_then_load_is_field_identical() {
    let ds = load_dataset(&fixture(), Format::JsonArray, &LoadOptions::default()).unwrap();
    let all: Vec<_> = ds
        .examples()
        .iter()
        .map(|e| goldsel::scoring::GoldenScoreRecord {
            candidate_id: e.id.clone(),
            gs: 0.5,
            improvements: 1,
            m: 2,
            overflow_count: 0,
        })
        .collect();
    let table = GoldenScoreTable::new(Fingerprint::of("t"), all);
    let manifest = top_fraction(&table, 1.0).unwrap();

    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("out.jsonl", Format::Jsonl), ("out.json", Format::JsonArray)] {
        let out = dir.path().join(name);
        export_subset(&manifest, &ds, &out, format).unwrap();
        assert_eq!(records(&out, format), records(&fixture(), Format::JsonArray));
        let back = load_dataset(&out, format, &LoadOptions::default()).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in back.examples().iter().zip(ds.examples()) {
            assert_eq!((&a.instruction, &a.input, &a.answer, &a.flags), (&b.instruction, &b.input, &b.answer, &b.flags));
            if format == Format::JsonArray {
                assert_eq!(a.raw_json(), b.raw_json());
            }
        }
    }
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.!?\n{}é]{0,40}"
}

fn example() -> impl Strategy<Value = InstructionExample> {
    ("[a-zA-Z][a-zA-Z0-9 ]{0,30}", proptest::option::of(text()), text()).prop_map(|(i, input, out)| {
        InstructionExample::new(ExampleId::from(0), i, input.as_deref(), out)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn demonstration_ends_with_answer(ex in example()) {
        let t = PromptTemplate::alpaca();
        let d = t.render(&ex, Role::Demonstration).unwrap();
        prop_assert!(d.ends_with(&ex.answer));
        prop_assert!(d.starts_with(&t.render(&ex, Role::Query).unwrap()));
        prop_assert_eq!(d, t.render(&ex, Role::Demonstration).unwrap());
    }

    #[test]
    fn empty_output_flag_iff_blank(out in "[ \t\na]{0,5}") {
        let ex = InstructionExample::new(ExampleId::from(0), "x", None, out.clone());
        prop_assert_eq!(ex.has_flag(Flag::EmptyOutput), out.trim().is_empty());
    }
}
