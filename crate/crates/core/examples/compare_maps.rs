//! Sliced Gromov-Wasserstein distances between contribution maps, the five
//! groupings of map pairs, and the rank tests between them.
//!
//! Maps are synthetic: each group has a base pattern and every training
//! condition perturbs it slightly.

use neurograph::data::{Group, PretrainScheme};
use neurograph::explain::{standardize, ContributionMap};
use neurograph::mapgeo::{distance_matrix, grouping_distances, grouping_tests, Condition, MapKey, GROUPINGS};
use neurograph::ChannelLayout;
use rand::{Rng, SeedableRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ChannelLayout::standard_12();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut maps = Vec::new();
    for g in Group::ALL {
        let base: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut keys: Vec<MapKey> = Condition::ALL.iter().map(|&c| MapKey::final_map(g, c)).collect();
        keys.extend(PretrainScheme::ALL.iter().map(|&s| MapKey::initial_map(g, s)));
        for key in keys {
            let raw: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.4..0.4)).collect();
            let map = ContributionMap { layout: layout.clone(), scores: standardize(&raw).0, edge_scores: None, edges: vec![] };
            maps.push((key.to_string(), map));
        }
    }

    let dm = distance_matrix(&maps, 500, 0)?;
    let grouped = grouping_distances(&dm);
    for (name, rows) in GROUPINGS.iter().zip(&grouped.rows) {
        let mean = rows.iter().map(|r| r.distance).sum::<f64>() / rows.len().max(1) as f64;
        println!("grouping {name:<3} {:>2} pairs, mean distance {mean:.3}", rows.len());
    }
    for t in grouping_tests(&grouped) {
        match t.result {
            Some(r) => println!("{:<10} {} statistic {:>5.1}  p {:.4}", t.comparison, r.method.name(), r.statistic, r.p),
            None => println!("{:<10} no data", t.comparison),
        }
    }
    Ok(())
}
