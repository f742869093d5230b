//! Synthesize a depth-7 grammar, check it, and round-trip it through text.

use cfglab::grammar::{parse_grammar_text, render_grammar_text, validate_cfg, CfgSynthSpec, GrammarFamily};
use cfglab::sampler::string_length_bounds;

fn main() {
    let cfg = CfgSynthSpec::new(vec![1, 3, 3, 3, 3, 3, 3], vec![2])
        .distinct(true)
        .seed(7)
        .synthesize()
        .expect("synthesis");
    assert!(validate_cfg(&cfg).is_empty());
    let text = render_grammar_text(&cfg);
    assert_eq!(parse_grammar_text(&text).unwrap(), cfg);
    let (lo, hi) = string_length_bounds(&cfg);
    println!("grammar {} with {} symbols, lengths {lo}..={hi}", cfg.content_hash_hex(), cfg.num_symbols());
    println!("{}", text.lines().take(5).collect::<Vec<_>>().join("\n"));

    for family in GrammarFamily::ALL {
        let g = family.spec(1).synthesize().unwrap();
        println!("{:>6}: sizes {:?}, max length {}", family.name(), g.sizes(), string_length_bounds(&g).1);
    }
}
