use std::sync::Arc;

use got_core::{ObjectState, Registry, Value, ValueKind};

pub const LINE: &str = "Line";
pub const WORD_COUNT: &str = "WordCount";
pub const STOP: &str = "Stop";

pub fn registry() -> Arc<Registry> {
    let mut reg = Registry::new();
    reg.register_schema(LINE, "line_num", &[("line_num", ValueKind::Int), ("line", ValueKind::Str)])
        .expect("Line schema");
    reg.register_schema(WORD_COUNT, "word", &[("word", ValueKind::Str), ("count", ValueKind::Int)])
        .expect("WordCount schema");
    reg.register_schema(STOP, "index", &[("index", ValueKind::Int), ("accepted", ValueKind::Bool)])
        .expect("Stop schema");
    Arc::new(reg)
}

fn object(type_name: &str, pkey: &str, dims: [(&str, Value); 2]) -> ObjectState {
    let pk = dims.iter().find(|(d, _)| *d == pkey).expect("pkey among dims").1.clone();
    ObjectState::new(type_name, pk, dims.into_iter().map(|(d, v)| (d.to_string(), v)).collect())
}

pub fn line(line_num: i64, text: &str) -> ObjectState {
    object(LINE, "line_num", [("line_num", line_num.into()), ("line", text.into())])
}

pub fn word_count(word: &str, count: i64) -> ObjectState {
    object(WORD_COUNT, "word", [("word", word.into()), ("count", count.into())])
}

pub fn stop(index: i64) -> ObjectState {
    object(STOP, "index", [("index", index.into()), ("accepted", false.into())])
}

/// The "simple tokenizer": whitespace separated words.
pub fn tokenize(line: &str) -> impl Iterator<Item = &str> {
    line.split_whitespace()
}
