//! Generation accuracy, diversity and distribution comparison on sampled pools.

use cfglab::evaluation::{
    diversity_table, extract_prefixes, generation_accuracy, marginal_diff, marginal_table, truth_records,
};
use cfglab::grammar::{CfgSynthSpec, GrammarFamily};
use cfglab::sampler::sample_corpus;

fn main() {
    let cfg = GrammarFamily::Cfg3b.spec(1).synthesize().unwrap();
    let pool = sample_corpus(&cfg, 1, 2000);

    let truth = truth_records(&pool, 50);
    println!("accuracy of true continuations: {}", generation_accuracy(&cfg, &truth).unwrap());
    let bare = extract_prefixes(&pool, 50);
    println!("accuracy of bare prefixes: {}", generation_accuracy(&cfg, &bare).unwrap());

    let table = diversity_table(&cfg, &pool);
    for ((symbol, to_level), cell) in table.cells().take(6) {
        println!("symbol {symbol} -> level {to_level}: {} distinct of {}, {} collisions", cell.distinct(), cell.total(), cell.collisions());
    }

    // With a single body length every string has the same length, so every
    // position is supported by the whole pool.
    let fixed = CfgSynthSpec::new(vec![1, 3, 3, 3], vec![2]).rule_lengths(vec![3]).seed(2).synthesize().unwrap();
    let a = marginal_table(&fixed, &sample_corpus(&fixed, 1, 10_000)).unwrap();
    let b = marginal_table(&fixed, &sample_corpus(&fixed, 2, 10_000)).unwrap();
    println!("marginal max-abs difference between two pools: {:.4}", marginal_diff(&a, &b).unwrap().max_abs);
}
