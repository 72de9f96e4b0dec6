//! Pretrains on the two opposite-round groups, then compares fine-tuning from
//! that initialization against training from scratch.
//!
//! All groups share a common signal on channels 4-7 on top of their own
//! signatures, so there is something to transfer.

use neurograph::data::{generate_synthetic, BandSignature, Group, LabelSignature, PretrainScheme, SyntheticSpec};
use neurograph::trainer::{cross_validate, pretrain, TrainConfig};
use neurograph::{ArchConfig, ChannelLayout, GnnClassifier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ChannelLayout::standard_12();
    let c = layout.len();
    let mut spec = SyntheticSpec::new(layout.clone(), 32.0, 2.0, 1).with_amplitude(0.3);
    spec.n_participants = 5;
    spec.common = Some(LabelSignature {
        success: BandSignature::on_channels(c, &[4, 5, 6, 7], 0.4),
        failure: BandSignature::on_channels(c, &[4, 5, 6, 7], 0.0),
    });
    let ds = generate_synthetic(&spec)?;
    let target = ds.group(Group::FirstLeft);

    let mut arch = ArchConfig::for_sampling_rate(32.0, 2.0);
    arch.filters = 8;
    arch.cheb_out = 8;
    let init = GnnClassifier::new(arch, &layout, 1)?;
    let fine_tune = TrainConfig { learning_rate: 1e-3, epochs: 15, checkpoints: vec![], seed: 1, ..Default::default() };
    let pre = TrainConfig { epochs: 30, ..fine_tune.clone() };

    let scratch = cross_validate(&target, 10, &fine_tune, &init, 1, None)?.mean_accuracy();
    println!("scratch: {scratch:.3}");
    for scheme in PretrainScheme::ALL {
        let sources = Group::FirstLeft.pretrain_sources(scheme);
        let mut model = init.clone();
        pretrain(&mut model, &ds.groups(&sources), &target, &pre)?;
        let acc = cross_validate(&target, 10, &fine_tune, &model, 1, None)?.mean_accuracy();
        println!("{} (from {:?}): {acc:.3}", scheme.name(), sources);
    }
    Ok(())
}
