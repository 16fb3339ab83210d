//! Merges the UCI Adult `adult.data` and `adult.test` files into one
//! headered CSV and draws a seeded row subset of it.
//!
//! `cargo run --example prepare_adult -- adult.data adult.test data [rows] [seed]`
//!
//! Writes `<dir>/adult.csv` and `<dir>/adult_<rows/1000>k.csv`. Fields are
//! trimmed, the test file's banner line is skipped and the trailing `.` on
//! its labels is removed. The subset keeps file order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HEADER: &str = "age,workclass,fnlwgt,education,education-num,marital-status,occupation,relationship,race,sex,\
capital-gain,capital-loss,hours-per-week,native-country,income";

fn rows_of(path: &str) -> std::io::Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('|'))
        .map(|l| {
            let fields: Vec<&str> = l.split(',').map(|f| f.trim().trim_end_matches('.')).collect();
            fields.join(",")
        })
        .collect())
}

fn write(path: &Path, rows: &[&String]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{HEADER}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

fn main() -> std::io::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 4 {
        eprintln!("usage: prepare_adult <adult.data> <adult.test> <out_dir> [rows] [seed]");
        std::process::exit(2);
    }
    let subset: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(20240229);
    let mut rows = rows_of(&args[1])?;
    rows.extend(rows_of(&args[2])?);
    let dir = Path::new(&args[3]);
    fs::create_dir_all(dir)?;
    write(&dir.join("adult.csv"), &rows.iter().collect::<Vec<_>>())?;

    let mut picks = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), rows.len(), subset.min(rows.len())).into_vec();
    picks.sort_unstable();
    let chosen: Vec<&String> = picks.iter().map(|&i| &rows[i]).collect();
    write(&dir.join(format!("adult_{}k.csv", subset / 1000)), &chosen)?;
    println!("{} rows merged, {} in subset", rows.len(), chosen.len());
    Ok(())
}
