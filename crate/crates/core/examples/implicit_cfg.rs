//! Observable strings through token bags, and their membership test.

use cfglab::grammar::GrammarFamily;
use cfglab::implicit::{build_observable_vocab, embedding_correlation, membership_observable, sample_observable, VocabSpec};
use cfglab::rng::seeded;
use cfglab::sampler::sample_corpus;

fn main() {
    let cfg = GrammarFamily::Cfg3i.spec(1).synthesize().unwrap();
    let mut rng = seeded(5);
    let vocab = build_observable_vocab(&cfg, &VocabSpec::new(30, false, false), &mut rng).unwrap();
    print!("{}", vocab.to_text().lines().take(4).map(|l| format!("{l}\n")).collect::<String>());

    let pool = sample_corpus(&cfg, 1, 50);
    let observed: Vec<Vec<u32>> = pool.iter().map(|d| sample_observable(d.terminals(), &vocab, &mut rng)).collect();
    let members = observed.iter().filter(|y| membership_observable(&cfg, &vocab, y)).count();
    println!("{members}/{} observable strings accepted", observed.len());

    // Embeddings that are a noisy function of the bag label.
    let labels = vocab.labels();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .enumerate()
        .map(|(t, l)| l.0.iter().map(|&b| f64::from(u8::from(b))).chain([(t % 5) as f64 * 0.01]).collect())
        .collect();
    let m = embedding_correlation(&rows, &labels).unwrap();
    println!("{} label groups over {} tokens", m.groups.len(), m.order.len());
}
