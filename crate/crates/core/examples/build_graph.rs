//! Builds the channel graph for the standard 12-electrode layout and prints its
//! spectrum and a few edge-dropout draws.

use neurograph::graph::{build_adjacency, edge_dropout, spectral_bundle};
use neurograph::ChannelLayout;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ChannelLayout::standard_12();
    let graph = build_adjacency(&layout, 0.75)?;
    let names = layout.names();
    println!("{} channels, {} edges", layout.len(), graph.edges().len());
    for (i, j) in graph.edges() {
        println!("  {:>3} - {:<3} w = {:.3}", names[i], names[j], graph.adjacency()[(i, j)]);
    }

    let sb = spectral_bundle(&graph)?;
    println!("lambda_max = {:.4}", sb.lambda_max);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for draw in 0..3 {
        let dropped = edge_dropout(&graph, 0.2, &mut rng)?;
        println!("dropout draw {draw}: {} edges kept", dropped.edges().len());
    }
    Ok(())
}
