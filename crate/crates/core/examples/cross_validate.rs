//! Participant-stratified 5-fold cross-validation on one synthetic group.

use neurograph::data::{generate_synthetic, Group, SyntheticSpec};
use neurograph::trainer::{cross_validate, TrainConfig};
use neurograph::{ArchConfig, ChannelLayout, GnnClassifier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ChannelLayout::standard_12();
    let spec = SyntheticSpec::new(layout.clone(), 32.0, 2.0, 3).with_amplitude(0.8);
    let ds = generate_synthetic(&spec)?.group(Group::SecondRight);

    let mut arch = ArchConfig::for_sampling_rate(32.0, 2.0);
    arch.filters = 8;
    arch.cheb_out = 8;
    let init = GnnClassifier::new(arch, &layout, 3)?;
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 15, checkpoints: vec![], seed: 3, ..Default::default() };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let report = cross_validate(&ds, 5, &cfg, &init, jobs, None)?;
    for f in &report.folds {
        println!(
            "fold {}  train {:>3}  acc {:.3}  weights [{:.2}, {:.2}]",
            f.fold, f.train_size, f.metrics.accuracy, f.class_weights[0], f.class_weights[1]
        );
    }
    let s = &report.summary;
    println!("accuracy {:.3} ± {:.3}", s.mean[0], s.std[0]);
    Ok(())
}
