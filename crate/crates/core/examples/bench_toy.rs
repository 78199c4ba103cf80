// quick benchmark: one training step of the paper-scale toy MLP
use gdiff_core::rng::GaussianNoise;
use gdiff_core::sde::SdeSpec;
use gdiff_core::toy::*;
use std::time::Instant;

fn main() {
    let mix = GaussMixture2D::default();
    let spec = SdeSpec::vp(0.01, 0.05, 1000).unwrap();
    let mut noise = GaussianNoise::from_seed(1);
    let mut model = ToyMlp::new(ToyMlpConfig::paper_scale(2), &mut noise);
    let settings = ToyTrainSettings { epochs: 10, batch: 2048, ..Default::default() };
    let t0 = Instant::now();
    let hist = train_toy_model(&mut model, &mix, &spec, ToyInput::JointPair, ToyTarget::EpsX, &settings);
    let dt = t0.elapsed().as_secs_f64() / 10.0;
    println!("per-step: {:.3}s  loss {:.4} -> {:.4}", dt, hist[0], hist[9]);
    println!("projected 5000 epochs x 4 models: {:.1} h", dt * 5000.0 * 4.0 / 3600.0);
}
