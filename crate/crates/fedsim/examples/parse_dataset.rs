//! Load a LibSVM-format dataset (or generate the bundled synthetic
//! stand-in), print its statistics, and show a round-trip through the
//! text format.
//!
//! Usage: cargo run --example parse_dataset [-- path/to/file.svm]

use fedsim::data;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ds = match args.get(1) {
        Some(path) => {
            println!("loading {path}");
            data::parse_libsvm_file(std::path::Path::new(path)).expect("parse failed")
        }
        None => {
            println!("no path given; generating the synthetic one-hot corpus");
            data::synthetic_mushrooms_like(7)
        }
    };
    let pos = ds.rows.iter().filter(|r| r.label > 0.0).count();
    println!("rows      = {}", ds.count());
    println!("dim       = {}", ds.dim);
    println!("positive  = {pos}");
    println!("negative  = {}", ds.count() - pos);
    let nnz: usize = ds.rows.iter().map(|r| r.features.len()).sum();
    println!("avg nnz   = {:.2}", nnz as f64 / ds.count() as f64);

    // round-trip: re-emit and re-parse
    let text = data::serialize_libsvm(&ds);
    let back = data::parse_libsvm(text.as_bytes()).expect("re-parse failed");
    assert_eq!(back, ds);
    println!("round-trip through the text format: identical");

    for (mode, name) in [
        (data::PartitionMode::Random, "random"),
        (data::PartitionMode::LabelSorted, "label_sorted"),
    ] {
        let part = data::partition(&ds, 12, mode, 0).expect("partition");
        let balance: Vec<usize> = part
            .shards
            .iter()
            .map(|s| s.iter().filter(|&&r| ds.rows[r].label > 0.0).count())
            .collect();
        println!(
            "{name}: n=12, m={}, positives per shard {balance:?}",
            part.m
        );
    }
}
