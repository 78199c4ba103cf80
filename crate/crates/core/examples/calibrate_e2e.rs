// Calibration harness for the end-to-end community-small pipeline: train the
// models once (or load a saved checkpoint), then sweep sampler settings and
// report MMD against the test split.

use gdiff_core::eval::evaluate;
use gdiff_core::graph::{generate_community_small, CommunityParams};
use gdiff_core::models::{
    assign_named_params, load_checkpoint, save_checkpoint, Checkpoint, ParamSet, ScoreModelA,
    ScoreModelAConfig, ScoreModelX, ScoreModelXConfig,
};
use gdiff_core::rng::SeedStream;
use gdiff_core::sde::SdeSpec;
use gdiff_core::solvers::{generate, DependencyMode, ModelScoreSource, SamplerConfig, SolverKind};
use gdiff_core::training::{train, LossConfig, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let ckpt_path = std::path::PathBuf::from(format!("/tmp/calib_e2e_{epochs}.ckpt"));

    let stream = SeedStream::new(109);
    let mut ds =
        generate_community_small(100, &CommunityParams::default(), &mut stream.noise("dataset"))
            .unwrap();
    ds.assign_split(42);
    let train_set = ds.train_view();
    let test_set = ds.test_view();
    let f = ds.f;
    println!("dataset: f={f}, train {} test {}", train_set.len(), test_set.len());

    let mut init = stream.noise("init");
    let mut mx = ScoreModelX::new(ScoreModelXConfig::community_small(f), &mut init);
    let mut ma = ScoreModelA::new(ScoreModelAConfig::community_small(f), &mut init);
    let spec = SdeSpec::vp(0.1, 1.0, 1000).unwrap();

    if ckpt_path.exists() {
        println!("loading {}", ckpt_path.display());
        let ckpt = load_checkpoint(&ckpt_path).unwrap();
        assign_named_params(&mut mx, &ckpt.params, "x.").unwrap();
        assign_named_params(&mut ma, &ckpt.params, "a.").unwrap();
    } else {
        let t0 = Instant::now();
        let out = train(
            &train_set,
            &mut mx,
            &mut ma,
            &spec,
            &spec,
            &LossConfig { t_eps: 1e-3, batch_size: 128, ..LossConfig::default() },
            &TrainConfig { lr: 1e-2, weight_decay: 1e-4, epochs, seed: 109, ..TrainConfig::default() },
            None,
        )
        .unwrap();
        let last = out.history.last().unwrap();
        println!(
            "trained {epochs} epochs in {:.0}s: loss_x {:.4} loss_a {:.4}",
            t0.elapsed().as_secs_f64(),
            last.loss_x,
            last.loss_a
        );
        for e in out.history.iter().step_by(epochs / 10 + 1) {
            println!("  ep {:>5}: {:.4} {:.4}", e.epoch, e.loss_x, e.loss_a);
        }
        let mut params = Vec::new();
        mx.visit_params(&mut |n, t| params.push((format!("x.{n}"), t.detach())));
        ma.visit_params(&mut |n, t| params.push((format!("a.{n}"), t.detach())));
        save_checkpoint(
            &Checkpoint {
                config_json: String::new(),
                step: epochs as u64,
                rng_seed: [0; 32],
                rng_word_pos: 0,
                params,
                ema: vec![],
            },
            &ckpt_path,
        )
        .unwrap();
    }

    let grid: Vec<(SolverKind, f64, f64)> = vec![
        (SolverKind::PcEm, 0.05, 0.7),
        (SolverKind::PcEm, 0.1, 0.7),
        (SolverKind::PcEm, 0.2, 0.7),
        (SolverKind::PcEm, 0.05, 1.0),
        (SolverKind::PcEm, 0.1, 1.0),
        (SolverKind::S4, 0.15, 0.7),
        (SolverKind::Em, 0.0, 0.7),
    ];
    for (solver, snr, scale_eps) in grid {
        let source = ModelScoreSource::new(&mx, &ma, spec, spec);
        let sampler = SamplerConfig {
            solver,
            steps: 1000,
            snr,
            scale_eps,
            mode: DependencyMode::Joint,
            n_corrector_steps: 1,
            t_eps: 1e-3,
        };
        let t0 = Instant::now();
        let (graphs, _) =
            generate(&source, &sampler, &spec, &spec, &train_set, test_set.len(), 1109).unwrap();
        let r = evaluate(&graphs, &test_set.graphs, 1.0).unwrap();
        let mean_edges: f64 = graphs
            .iter()
            .map(|g| (0..g.n_max()).map(|i| g.degree(i)).sum::<usize>() as f64 / 2.0)
            .sum::<f64>()
            / graphs.len() as f64;
        let data_edges: f64 = test_set
            .graphs
            .iter()
            .map(|g| (0..g.n_max()).map(|i| g.degree(i)).sum::<usize>() as f64 / 2.0)
            .sum::<f64>()
            / test_set.len() as f64;
        println!(
            "{:<10} snr {:>4} eps {:>3}: deg {:.3} clus {:.3} orb {:.3} avg {:.3} | edges {:.1} vs {:.1} ({:.0}s)",
            solver.name(),
            snr,
            scale_eps,
            r.degree,
            r.clustering,
            r.orbit,
            r.average,
            mean_edges,
            data_edges,
            t0.elapsed().as_secs_f64()
        );
    }
}
