use std::path::Path;

use mecvf_cli::spec::ExperimentSpec;

#[test]
fn shipped_configs_load_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let again = ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap();
            assert_eq!(spec, again, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
