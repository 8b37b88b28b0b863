use std::path::PathBuf;

use stylecrawl_core::sim::{bundled_fixtures, MockApp, MockAppSpec};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Set `STYLECRAWL_BLESS=1` to regenerate the files.
#[test]
fn bundled_files_match_generators() {
    let bless = std::env::var_os("STYLECRAWL_BLESS").is_some();
    for (name, spec) in bundled_fixtures() {
        let path = fixture_dir().join(name);
        if bless {
            spec.save(&path).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, spec.to_json(), "{name} is stale; rerun with STYLECRAWL_BLESS=1");
        let parsed = MockAppSpec::from_json(&text).unwrap();
        MockApp::new(parsed).unwrap();
    }
}
