use std::collections::BTreeSet;
use std::path::Path;

/// Every chapter linked from SUMMARY.md is compiled as doctests, and nothing else is.
#[test]
fn every_chapter_is_doctested() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let summary = std::fs::read_to_string(root.join("../../book/src/SUMMARY.md")).unwrap();
    let lib = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();

    let linked: BTreeSet<&str> = summary
        .split("](")
        .skip(1)
        .map(|rest| &rest[..rest.find(')').unwrap()])
        .collect();
    let included: BTreeSet<&str> = lib
        .split("include_str!(\"../../../book/src/")
        .skip(1)
        .map(|rest| &rest[..rest.find('"').unwrap()])
        .collect();
    assert_eq!(linked, included);
    for chapter in &linked {
        assert!(root.join("../../book/src").join(chapter).is_file(), "{chapter}");
    }
}
