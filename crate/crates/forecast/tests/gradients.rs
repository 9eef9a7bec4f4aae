use bsat::posenc::PosEncMode;
use bsat_forecast::gradcheck::{analytic_gradients, grad_check, DEFAULT_STEP};
use bsat_forecast::model::{Model, ModelConfig, ParamGroup, TokenWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(mode: PosEncMode) -> ModelConfig {
    ModelConfig {
        layers: 2,
        d_model: 16,
        heads: 4,
        ff_factor: 2,
        dropout: 0.0,
        fc_dropout: 0.0,
        attn_dropout: 0.0,
        horizon: 4,
        mode,
        tokens: 8,
        lookback: 64,
        ..ModelConfig::default()
    }
}

fn batch(seed: u64) -> Vec<TokenWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|_| {
            let mut centers: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..63.0)).collect();
            centers.sort_by(f64::total_cmp);
            TokenWindow {
                values: (0..8).map(|_| rng.random_range(-2.0..2.0)).collect(),
                centers,
                target: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            }
        })
        .collect()
}

#[test]
fn every_group_matches_finite_differences() {
    let data = batch(11);
    let refs: Vec<&TokenWindow> = data.iter().collect();
    for mode in PosEncMode::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::new(tiny(mode), &mut rng).unwrap();
        let report = grad_check(&model, &refs, DEFAULT_STEP, 40, 17).unwrap();
        assert_eq!(report.groups.len(), 7);
        assert!(report.max_rel_error < 1e-4, "{mode}: {:#?}", report.groups);
        let phi = report.group(ParamGroup::Phi).unwrap();
        assert_eq!(phi.checked, 2);
        if mode.learnable_base() {
            assert!(phi.max_abs_grad > 0.0, "{mode}");
        } else {
            assert_eq!(phi.max_abs_grad, 0.0, "{mode}");
        }
        let lpe = report.group(ParamGroup::Lpe).unwrap();
        assert_eq!(lpe.max_abs_grad > 0.0, mode.uses_lpe(), "{mode}");
    }
}

#[test]
fn zero_loss_batch_has_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = Model::new(tiny(PosEncMode::LRopeLpe), &mut rng).unwrap();
    let mut data = batch(12);
    // batch statistics make train-phase outputs differ from eval ones, so
    // targets come from the same train-phase forward
    let refs: Vec<&TokenWindow> = data.iter().collect();
    let mut tape = bsat_forecast::tape::Tape::new();
    let fwd = model
        .forward(&mut tape, &refs, bsat_forecast::Phase::Train, None)
        .unwrap();
    let out = tape.value(fwd.output).clone();
    for (r, w) in data.iter_mut().enumerate() {
        w.target = out.row(r).to_vec();
    }
    let refs: Vec<&TokenWindow> = data.iter().collect();
    let grads = analytic_gradients(&model, &refs).unwrap();
    assert!(grads.iter().flatten().all(|&g| g == 0.0));
}
