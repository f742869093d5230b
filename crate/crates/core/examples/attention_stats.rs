//! Position-centered attention grids on fixtures with known structure.

use cfglab::attention::{end_targeting_grid, end_to_end_by_distance, position_profile};
use cfglab::grammar::GrammarFamily;
use cfglab::tensor::{synthesize_fixture, AttentionProfile, FixtureSpec, HiddenProfile};

fn main() {
    let cfg = GrammarFamily::Cfg3i.spec(1).synthesize().unwrap();
    let mut spec = FixtureSpec::new(30, HiddenProfile::Random { dim: 1 }, AttentionProfile::EndMass { boost: 4.0 });
    spec.layers = 1;
    let f = synthesize_fixture(&cfg, &spec, 2);
    let profile = position_profile(&f.dump).unwrap();
    let grid = end_targeting_grid(&f.dump, &profile, &f.derivations).unwrap();
    for (r, name) in grid.rows.iter().enumerate() {
        let means: Vec<String> = (0..grid.cols.len())
            .map(|c| grid.aggregate(None, r, c).mean().map_or("-".into(), |m| format!("{m:+.4}")))
            .collect();
        println!("level {name}: {}", means.join(" "));
    }

    spec.attention = AttentionProfile::AdjacentEnd { mass: 0.6 };
    let f = synthesize_fixture(&cfg, &spec, 2);
    let profile = position_profile(&f.dump).unwrap();
    let grid = end_to_end_by_distance(&f.dump, &profile, &f.derivations, 4).unwrap();
    println!("{}", grid.to_csv().lines().filter(|l| l.starts_with("all,all")).take(8).collect::<Vec<_>>().join("\n"));
}
