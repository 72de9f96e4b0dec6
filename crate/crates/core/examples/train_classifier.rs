//! Trains the classifier on one synthetic group and reports training accuracy.

use neurograph::data::{generate_synthetic, Group, SyntheticSpec};
use neurograph::trainer::{evaluate, train_model, Phase, TrainConfig};
use neurograph::{ArchConfig, ChannelLayout, GnnClassifier};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ChannelLayout::standard_12();
    // 32 Hz keeps this quick; the model adapts its kernel to the rate
    let spec = SyntheticSpec::new(layout.clone(), 32.0, 2.0, 7).with_amplitude(0.8);
    let ds = generate_synthetic(&spec)?.group(Group::FirstLeft);

    let mut arch = ArchConfig::for_sampling_rate(32.0, 2.0);
    arch.filters = 8;
    arch.cheb_out = 8;
    let mut model = GnnClassifier::new(arch, &layout, 7)?;
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 30, checkpoints: vec![], seed: 7, ..Default::default() };

    let all: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let history = train_model(&mut model, &ds, &all, &cfg, Phase::Pretrain, &mut rng, &mut |_, _| Ok(()))?;
    for r in history.records.iter().step_by(5) {
        println!("epoch {:>2}  loss {:.4}  acc {:.3}", r.epoch, r.loss, r.train_acc);
    }
    let m = evaluate(&model, &ds)?;
    println!("training accuracy {:.3}, F1 {:.3}", m.accuracy, m.f1);
    Ok(())
}
