//! The three corruption kinds and prefix corruption.

use cfglab::grammar::GrammarFamily;
use cfglab::parser::membership;
use cfglab::perturbation::{apply_fraction, corrupt_prefix, perturb_nt_level, perturb_t_level, NtMode, Permutation};
use cfglab::rng::seeded;
use cfglab::sampler::sample_corpus;

fn main() {
    let cfg = GrammarFamily::Cfg3b.spec(1).synthesize().unwrap();
    let pool = sample_corpus(&cfg, 2, 200);
    let mut rng = seeded(3);

    let x = pool[0].terminals();
    let t = perturb_t_level(&cfg, x, 0.15, &mut rng);
    println!("T-level: {} symbols changed, member = {}", x.iter().zip(&t).filter(|(a, b)| a != b).count(), membership(&cfg, &t).unwrap());

    let nt = perturb_nt_level(&cfg, &pool[0], 0.10, NtMode::Random, &mut rng);
    println!("NT-level random: {} level-{} symbols changed", nt.changed, cfg.depth() - 1);
    let pi = Permutation::next_symbol(cfg.symbols(cfg.depth() - 1));
    let nt = perturb_nt_level(&cfg, &pool[0], 0.05, NtMode::Deterministic(&pi), &mut rng);
    println!("NT-level deterministic: {} changed", nt.changed);

    let corrupted = corrupt_prefix(&cfg, x, 50, 0.15, &mut rng);
    println!("corrupted prefix of length {}", corrupted.len());

    let items: Vec<Vec<u32>> = pool.iter().map(|d| d.terminals().to_vec()).collect();
    let flagged = apply_fraction(items, 0.1, 4, |x, rng| perturb_t_level(&cfg, &x, 0.15, rng)).unwrap();
    let grammatical = flagged.iter().filter(|f| f.perturbed && membership(&cfg, &f.item).unwrap()).count();
    println!("{} of {} perturbed, {grammatical} still grammatical", flagged.iter().filter(|f| f.perturbed).count(), flagged.len());
}
