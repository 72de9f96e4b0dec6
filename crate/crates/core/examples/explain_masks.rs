//! Fits node and edge masks to a trained model and writes the contribution map
//! as CSV and SVG into the system temp directory.

use neurograph::data::{generate_synthetic, Group, SyntheticSpec};
use neurograph::explain::{contribution_map, masked_accuracy, optimize_masks, ExplainConfig};
use neurograph::topomap::render_svg;
use neurograph::trainer::{evaluate, train_model, Phase, TrainConfig};
use neurograph::{ArchConfig, ChannelLayout, GnnClassifier};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ChannelLayout::standard_12();
    let spec = SyntheticSpec::new(layout.clone(), 32.0, 2.0, 2).with_amplitude(0.8);
    let ds = generate_synthetic(&spec)?.group(Group::FirstLeft);

    let mut arch = ArchConfig::for_sampling_rate(32.0, 2.0);
    arch.filters = 8;
    arch.cheb_out = 8;
    let mut model = GnnClassifier::new(arch, &layout, 2)?;
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 40, checkpoints: vec![], seed: 2, ..Default::default() };
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    train_model(&mut model, &ds, &all, &cfg, Phase::Pretrain, &mut rng, &mut |_, _| Ok(()))?;

    let xc = ExplainConfig { epochs: 300, seed: 2, ..Default::default() };
    let ex = optimize_masks(&model, &ds, &xc)?;
    let map = contribution_map(&ex.masks, &layout);

    let names = layout.names();
    let top: Vec<&str> = map.top_k(5).iter().map(|&i| names[i].as_str()).collect();
    println!("top channels: {top:?} (planted: {:?})", &names[..4]);
    println!(
        "accuracy {:.3}, with masks {:.3}",
        evaluate(&model, &ds)?.accuracy,
        masked_accuracy(&model, &ex.masks, &ds)?
    );

    let dir = std::env::temp_dir();
    map.write_csv(std::fs::File::create(dir.join("first_left_map.csv"))?)?;
    std::fs::write(dir.join("first_left_map.svg"), render_svg(&map, "FirstLeft"))?;
    println!("wrote {}", dir.join("first_left_map.{csv,svg}").display());
    Ok(())
}
