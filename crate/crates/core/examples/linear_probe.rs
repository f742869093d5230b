//! Train the multi-head linear probe on planted and random hidden states.

use cfglab::grammar::GrammarFamily;
use cfglab::probe::{probe_eval, probe_train, ProbeConfig, ProbeDataset, ProbeMask, ProbeTarget};
use cfglab::tensor::{synthesize_fixture, AttentionProfile, FixtureSpec, HiddenProfile};

fn main() {
    let cfg = GrammarFamily::Cfg3i.spec(1).synthesize().unwrap();
    let config = ProbeConfig {
        heads: 4,
        pos_dim: 32,
        mask: ProbeMask::Local(0),
        lr: 0.05,
        iterations: 300,
        batch: 16,
        ..ProbeConfig::default()
    };
    for hidden in [HiddenProfile::Planted { noise: 0.0, shift: 0 }, HiddenProfile::Random { dim: 16 }] {
        let f = synthesize_fixture(&cfg, &FixtureSpec::new(48, hidden.clone(), AttentionProfile::UniformCausal), 1);
        let data = ProbeDataset::from_dump(&cfg, &f.dump, &f.derivations, 0, ProbeTarget::Ancestors).unwrap();
        let train = data.subset(0..40);
        let test = data.subset(40..48);
        let config = ProbeConfig {
            max_len: Some(data.max_len()),
            ..config.clone()
        };
        let outcome = probe_train(&config, &train, 2).unwrap();
        let table = probe_eval(&outcome.model, &test).unwrap();
        println!("{hidden:?}");
        print!("{}", table.to_csv());
    }
}
