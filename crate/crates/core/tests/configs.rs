use std::path::PathBuf;

use aasist2::config::RunConfig;
use aasist2::data::{ChunkMode, SynthSpec};

fn read(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(p).unwrap()
}

// Data paths point at a corpus that may not exist yet; drop them before
// validation.
fn without_data(name: &str) -> RunConfig {
    let mut doc: toml::Table = read(name).parse().unwrap();
    doc.remove("data");
    RunConfig::from_toml(&toml::to_string(&doc).unwrap(), &[]).unwrap()
}

#[test]
fn desk_configs_differ_only_in_chunking_and_margin() {
    let dcs = without_data("desk.toml");
    let fixed = without_data("desk-fixed4s.toml");
    let mut expected = RunConfig::desk(1);
    expected.chunk.mode = ChunkMode::Dcs;
    assert_eq!(dcs, expected);
    let mut baseline = RunConfig::desk(1);
    baseline.loss.almft = false;
    assert_eq!(fixed, baseline);
    assert!(dcs.loss.almft);
}

#[test]
fn full_config_matches_preset() {
    let mut expected = RunConfig::full(1);
    expected.chunk.mode = ChunkMode::Dcs;
    assert_eq!(without_data("full.toml"), expected);
}

#[test]
fn synth_config_is_the_default_corpus() {
    assert_eq!(SynthSpec::from_toml(&read("synth.toml")).unwrap(), SynthSpec::default());
}
