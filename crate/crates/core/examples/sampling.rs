//! Sample derivations and print their per-level annotations.

use cfglab::grammar::GrammarFamily;
use cfglab::sampler::file::{write_annotated, AnnotatedSample};
use cfglab::sampler::{boundaries, sample_corpus};

fn main() {
    let cfg = GrammarFamily::Cfg3b.spec(3).synthesize().unwrap();
    let pool = sample_corpus(&cfg, 11, 1000);
    let mean = pool.iter().map(|d| d.len()).sum::<usize>() as f64 / pool.len() as f64;
    println!("{} samples, mean length {mean:.1}", pool.len());

    let d = &pool[0];
    let b = boundaries(d).unwrap();
    println!("x  = {:?}", &d.terminals()[..12]);
    for level in 1..cfg.depth() {
        println!("p{level} = {:?}", &d.ancestor_indices(level)[..12]);
    }
    println!("b# = {:?}", &b.deepest_all()[..12]);

    let sample = AnnotatedSample::from_derivation(0, &cfg.content_hash_hex(), d.clone());
    print!("{}", write_annotated(&[sample]).lines().take(3).map(|l| format!("{l}\n")).collect::<String>());
}
