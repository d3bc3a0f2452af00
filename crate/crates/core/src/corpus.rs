//! The shipped test sequences (TS1-TS6) and requirement assessments (F1, D1-D3).

use std::sync::OnceLock;

use crate::testlang::{parse_block, Block};

pub const SEQUENCE_SOURCES: [(&str, &str); 6] = [
    ("TS1", include_str!("../data/sequences/TS1.tst")),
    ("TS2", include_str!("../data/sequences/TS2.tst")),
    ("TS3", include_str!("../data/sequences/TS3.tst")),
    ("TS4", include_str!("../data/sequences/TS4.tst")),
    ("TS5", include_str!("../data/sequences/TS5.tst")),
    ("TS6", include_str!("../data/sequences/TS6.tst")),
];

pub const ASSESSMENT_SOURCES: [(&str, &str); 4] = [
    ("F1", include_str!("../data/assessments/F1.tst")),
    ("D1", include_str!("../data/assessments/D1.tst")),
    ("D2", include_str!("../data/assessments/D2.tst")),
    ("D3", include_str!("../data/assessments/D3.tst")),
];

fn parse_all(sources: &[(&str, &str)]) -> Vec<Block> {
    sources
        .iter()
        .map(|(name, src)| parse_block(src).unwrap_or_else(|e| panic!("bundled {name}: {e}")))
        .collect()
}

pub fn sequences() -> &'static [Block] {
    static BLOCKS: OnceLock<Vec<Block>> = OnceLock::new();
    BLOCKS.get_or_init(|| parse_all(&SEQUENCE_SOURCES))
}

pub fn assessments() -> &'static [Block] {
    static BLOCKS: OnceLock<Vec<Block>> = OnceLock::new();
    BLOCKS.get_or_init(|| parse_all(&ASSESSMENT_SOURCES))
}

pub fn sequence(name: &str) -> Option<&'static Block> {
    sequences().iter().find(|b| b.name == name)
}

pub fn assessment(id: &str) -> Option<&'static Block> {
    assessments().iter().find(|b| b.name == id)
}
