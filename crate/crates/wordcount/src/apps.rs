//! Grouper and WordCounter application flows.

use std::time::Duration;

use got_core::{Dataframe, Result, Value};

use crate::schema::{line, stop, tokenize, word_count, LINE, STOP, WORD_COUNT};

/// Final tally in order of first appearance in the input.
pub type Counts = Vec<(String, i64)>;

pub fn render(counts: &Counts) -> String {
    counts.iter().map(|(w, n)| format!("{w} {n}\n")).collect()
}

/// Reads a `render`ed tally back.
pub fn parse(output: &str) -> Counts {
    output
        .lines()
        .filter_map(|l| {
            let (w, n) = l.rsplit_once(' ')?;
            Some((w.to_string(), n.parse().ok()?))
        })
        .collect()
}

/// Word frequencies of `lines` counted sequentially.
pub fn sequential_counts(lines: &[String]) -> Counts {
    let mut out: Counts = Vec::new();
    for l in lines {
        for w in tokenize(l) {
            match out.iter_mut().find(|(x, _)| x == w) {
                Some((_, n)) => *n += 1,
                None => out.push((w.to_string(), 1)),
            }
        }
    }
    out
}

fn all_accepted(df: &Dataframe) -> Result<bool> {
    Ok(df
        .objects(STOP)?
        .iter()
        .all(|s| s.get("accepted").and_then(Value::as_bool) == Some(true)))
}

/// Publishes one Line per input line, then a Stop per worker, and waits
/// until every worker accepted its Stop. `poll` is slept between checkouts
/// that brought nothing new.
pub fn grouper_app(df: &mut Dataframe, lines: &[String], num_workers: usize, poll: Duration) -> Result<Counts> {
    for (i, text) in lines.iter().enumerate() {
        df.add_one(line(i as i64, text))?;
        df.commit()?;
    }
    df.add_many((0..num_workers as i64).map(stop))?;
    df.commit()?;
    while !all_accepted(df)? {
        let before = df.base_version().clone();
        let now = df.checkout()?;
        if now == before && !poll.is_zero() {
            std::thread::sleep(poll);
        }
    }
    // the last acceptance may have arrived after the snapshot was taken
    df.checkout()?;

    let counts: Vec<(String, i64)> = df
        .objects(WORD_COUNT)?
        .into_iter()
        .map(|o| {
            let w = o.pkey.as_str().unwrap_or_default().to_string();
            (w, o.get("count").and_then(Value::as_int).unwrap_or(0))
        })
        .collect();
    let mut order: Vec<String> = Vec::new();
    for l in df.objects(LINE)? {
        for w in tokenize(l.get("line").and_then(Value::as_str).unwrap_or_default()) {
            if !order.iter().any(|x| x == w) {
                order.push(w.to_string());
            }
        }
    }
    let rank = |w: &str| order.iter().position(|x| x == w).unwrap_or(usize::MAX);
    let mut counts = counts;
    counts.sort_by(|a, b| rank(&a.0).cmp(&rank(&b.0)).then_with(|| a.0.cmp(&b.0)));
    Ok(counts)
}

/// Counts words on lines `index`, `index + num_workers`, ... as they show
/// up at the Grouper, then accepts its Stop.
pub fn worker_app(df: &mut Dataframe, index: usize, num_workers: usize) -> Result<()> {
    let mut line_num = index as i64;
    loop {
        df.pull()?;
        let current = df.read_one(LINE, line_num)?;
        if let Some(h) = &current {
            let text = df.get(h, "line")?;
            for word in tokenize(text.as_str().unwrap_or_default()) {
                let obj = match df.read_one(WORD_COUNT, word)? {
                    Some(obj) => obj,
                    None => df.add_one(word_count(word, 0))?,
                };
                let n = df.get(&obj, "count")?.as_int().unwrap_or(0);
                df.set(&obj, "count", n + 1)?;
            }
            line_num += num_workers as i64;
        }
        let stop_seen = df.read_one(STOP, index as i64)?.is_some();
        df.commit()?;
        df.push()?;
        if stop_seen && current.is_none() {
            break;
        }
    }
    let h = df
        .read_one(STOP, index as i64)?
        .expect("the loop only ends once the Stop is visible");
    df.set(&h, "accepted", true)?;
    df.commit()?;
    df.push()?;
    Ok(())
}
