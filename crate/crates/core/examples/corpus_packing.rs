//! Pack samples into training windows and recover them.

use cfglab::corpus::{pack_corpus, read_corpus, unpack_stream, write_corpus};
use cfglab::grammar::GrammarFamily;
use cfglab::rng::seeded;
use cfglab::sampler::sample_corpus;

fn main() {
    let cfg = GrammarFamily::Cfg3b.spec(1).synthesize().unwrap();
    let samples: Vec<Vec<u32>> = sample_corpus(&cfg, 1, 200).iter().map(|d| d.terminals().to_vec()).collect();
    let (corpus, stats) = pack_corpus(&cfg, &samples, 512, &mut seeded(9)).unwrap();
    println!("{} windows, offset {}, dropped tail {}", corpus.windows.len(), stats.offset, stats.dropped_tail);

    let bytes = write_corpus(&corpus);
    assert_eq!(read_corpus(&bytes).unwrap(), corpus);
    let recovered = unpack_stream(&corpus).unwrap();
    let whole = recovered.iter().filter(|s| !s.partial).count();
    println!("{} bytes on disk, {whole} whole samples recovered", bytes.len());
}
