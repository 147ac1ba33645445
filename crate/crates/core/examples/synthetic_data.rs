//! Write a synthetic labeled dataset as JSON lines.
//!
//! cargo run --example synthetic_data -- labeled.jsonl [triples-per-role] [seed]

use std::fs::File;
use std::io::BufWriter;

use rolerel::corpus::write_triples;
use rolerel::synthetic::{role_triples, SyntheticRoles};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .ok_or("usage: synthetic_data <out.jsonl> [triples-per-role] [seed]")?;
    let mut spec = SyntheticRoles::default();
    if let Some(n) = args.next() {
        spec.triples_per_role = n.parse()?;
    }
    if let Some(seed) = args.next() {
        spec.seed = seed.parse()?;
    }
    let triples = role_triples(&spec)?;
    write_triples(BufWriter::new(File::create(&path)?), &triples)?;
    println!("wrote {} triples to {path}", triples.len());
    Ok(())
}
