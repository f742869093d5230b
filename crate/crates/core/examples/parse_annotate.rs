//! Membership, ambiguity counting and annotation with the chart parser.

use cfglab::grammar::{CfgSynthSpec, GrammarFamily};
use cfglab::parser::{annotate, count_parses, membership};
use cfglab::sampler::sample_corpus;

fn main() {
    let cfg = GrammarFamily::Cfg3i.spec(2).synthesize().unwrap();
    let pool = sample_corpus(&cfg, 5, 20);
    let start = std::time::Instant::now();
    let accepted = pool.iter().filter(|d| membership(&cfg, d.terminals()).unwrap()).count();
    println!("{accepted}/{} sampled strings accepted in {:?}", pool.len(), start.elapsed());

    let mut x = pool[0].terminals().to_vec();
    x.swap(0, 1);
    println!("after swapping two symbols: member = {}", membership(&cfg, &x).unwrap());

    let d = &pool[1];
    println!("parse count of sample 1: {}", count_parses(&cfg, d.terminals()).unwrap());

    let unambiguous = CfgSynthSpec::new(vec![1, 3, 3, 3, 3], vec![2]).prefix_free(true).seed(4).synthesize().unwrap();
    let s = &sample_corpus(&unambiguous, 0, 1)[0];
    let recovered = annotate(&unambiguous, s.terminals()).unwrap();
    println!("prefix-free grammar: annotation recovered exactly = {}", &recovered == s);
}
