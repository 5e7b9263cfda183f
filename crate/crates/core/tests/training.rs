use zslforge::dataio::{generate_synthetic, SynthConfig};
use zslforge::trainer::{TrainConfig, Trainer};

#[test]
fn reconstruction_loss_falls_over_200_steps() {
    let ds = generate_synthetic(&SynthConfig::default()).unwrap();
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..3 {
        let mut t = Trainer::new(&ds, TrainConfig { seed, ..TrainConfig::default() }).unwrap();
        for step in 1..=200 {
            let l = t.train_step().unwrap();
            assert!(l.critic.is_finite() && l.critic.abs() < 1e3, "critic loss {} at step {step}", l.critic);
            assert!(l.gradient_penalty >= 0.0);
            match step {
                1 => first += l.sr / 3.0,
                200 => last += l.sr / 3.0,
                _ => {}
            }
        }
    }
    assert!(last < first, "sr loss {first} -> {last}");
}
