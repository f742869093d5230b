//! Build a synthetic tensor dump, write it and read it back.

use cfglab::grammar::GrammarFamily;
use cfglab::tensor::{read_dump, synthesize_fixture, write_dump, AttentionProfile, FixtureSpec, HiddenProfile};

fn main() {
    let cfg = GrammarFamily::Cfg3i.spec(1).synthesize().unwrap();
    let spec = FixtureSpec::new(8, HiddenProfile::Planted { noise: 0.1, shift: 0 }, AttentionProfile::UniformWindow);
    let f = synthesize_fixture(&cfg, &spec, 3);
    let bytes = write_dump(&f.dump).unwrap();
    let back = read_dump(&bytes).unwrap();
    assert_eq!(back, f.dump);
    back.header.check_grammar(&cfg.content_hash()).unwrap();
    let h = &back.header;
    println!("{} sequences, {} layers x {} heads, dim {}, {} bytes", back.sequences.len(), h.layers, h.heads, h.dim, bytes.len());
    let s = &back.sequences[0];
    println!("head 2 row 10: {:?}", s.attention_row(h, 0, 2, 10));
}
