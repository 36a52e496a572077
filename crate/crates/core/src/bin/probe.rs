//! Scratch probe for sizing desk-scale configs. Not part of the toolkit.

fn main() {
    let mut cfg = bdlab_core::data::synth::SynthConfig::desk_default("probe", 1);
    cfg.n_train = 2000;
    cfg.n_test = 500;
    let ds = bdlab_core::data::synth::make_synthetic_classed_dataset(&cfg);
    let tcfg = bdlab_core::victim::VictimTrainConfig {
        epochs: 12,
        batch: 128,
        lr: 0.01,
        decay_epochs: vec![8, 10],
        seed: 1,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let trained = bdlab_core::victim::train_victim(&ds.train, Some(&ds.test), &tcfg).unwrap();
    for l in &trained.log {
        println!(
            "epoch {} lr {:.5} loss {:.4} acc {:?}",
            l.epoch, l.lr, l.train_loss, l.test_accuracy
        );
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
