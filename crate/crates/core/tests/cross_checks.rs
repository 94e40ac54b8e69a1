use nalgebra::DVector;
use rand::Rng;
use voi_control::estimation::{self, EncoderState};
use voi_control::instances::random_model;
use voi_control::linalg;
use voi_control::model::{ProcessModel, Stationary};
use voi_control::oracle::{self, TinyInstance};
use voi_control::policies::{ControlPolicy, TriggerKind, TriggerPolicy};
use voi_control::rng::episode_rng;
use voi_control::sim::{self, MonteCarlo};
use voi_control::voidp::{self, GridSpec, Integration, VoiSource};
use voi_control::Design;

fn scalar(a: f64, horizon: usize, lambda: f64) -> Design {
    let st = Stationary::scalar(a, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, lambda);
    Design::new(ProcessModel::from_stationary(horizon, &st).unwrap()).unwrap()
}

fn quadrature_grid(order: usize, points: usize) -> GridSpec {
    GridSpec {
        points,
        quad_nodes: order,
        integration: Integration::GaussHermite,
        ..GridSpec::default()
    }
}

#[test]
fn encoder_matches_batch_posterior_on_a_three_state_two_sensor_model() {
    let mut rng = episode_rng(3, 0);
    let design = Design::new(random_model(3, 2, 10, &mut rng)).unwrap();
    let model = &design.model;
    let mut x = model.sample_initial(&mut rng);
    let (mut ys, mut us) = (Vec::new(), Vec::new());
    for k in 0..model.stages() {
        ys.push(design.sensors.stack(&model.observe(k, &x, &mut rng)));
        let u = DVector::from_fn(model.input_dim(), |_, _| rng.random_range(-2.0..2.0));
        x = model.step_process(k, &x, &u, &mut rng);
        us.push(u);
    }
    us.pop();
    let batch = oracle::batch_mmse(model, &ys, &us).unwrap();
    let mut enc = EncoderState::initial(model, &design.schedule, &ys[0]);
    assert!(linalg::rel_diff(&enc.estimate, &batch[0]) <= 1e-8);
    for k in 0..model.horizon() {
        enc = estimation::encoder_update(&enc, model, &design.schedule, &ys[k + 1], &us[k]);
        assert!(linalg::rel_diff(&enc.estimate, &batch[k + 1]) <= 1e-8, "stage {}", k + 1);
    }
}

#[test]
fn decomposed_enumeration_equals_literal_enumeration() {
    for a in [0.7, 1.0, 1.3] {
        for lambda in [0.3, 0.7] {
            let tiny = TinyInstance::new(scalar(a, 2, lambda), 5).unwrap();
            let starts = [-2.0, -0.4, 0.0, 0.9, 3.0];
            let fast = oracle::enumerate_policies(&tiny, &starts).unwrap();
            for (opt, &e) in fast.iter().zip(&starts) {
                let slow = oracle::brute_force_value(&tiny, e);
                assert!((opt.value - slow).abs() <= 1e-12 * slow.abs().max(1.0), "a={a} λ={lambda} e={e}");
            }
        }
    }
}

#[test]
fn dp_equals_enumeration_off_the_standard_instance() {
    for a in [0.6, 1.25] {
        for horizon in [1, 2] {
            let design = scalar(a, horizon, 0.4);
            let table = voidp::backward_induction(&design, &quadrature_grid(9, 257)).unwrap();
            let tiny = TinyInstance::new(design, 9).unwrap();
            let stage = table.stage(0).unwrap();
            let optima = oracle::enumerate_policies(&tiny, &stage.nodes).unwrap();
            for (o, v) in optima.iter().zip(&stage.values) {
                assert!((o.value - v).abs() < 1e-6, "a={a} N={horizon}: {} vs {v}", o.value);
            }
            assert!(optima.iter().all(|o| o.is_threshold_type(&tiny)));
        }
    }
}

#[test]
fn exact_rollouts_are_no_worse_than_the_myopic_rule() {
    let design = scalar(1.1, 6, 0.5);
    let table = voidp::backward_induction(&design, &GridSpec::default()).unwrap();
    let myopic: Vec<f64> = (0..design.model.stages())
        .map(|k| voidp::extract_threshold(VoiSource::Myopic, &design, k).unwrap())
        .collect();
    let sigma = table.stage(0).unwrap().sigma;
    for e0 in [0.0, sigma, 2.0 * sigma] {
        let exact = oracle::rollout_value(&design, 0, e0, 40_000, 9, |t, e| table.decision(t, e));
        let greedy = oracle::rollout_value(&design, 0, e0, 40_000, 9, |t, e| e.abs() >= myopic[t]);
        assert!(exact.mean <= greedy.mean + 3.0 * exact.se.hypot(greedy.se), "e0={e0}");
        assert!((exact.mean - table.value(0, e0)).abs() <= 3.0 * exact.se);
    }
}

#[test]
fn thresholds_shrink_as_lambda_grows_for_an_unstable_plant() {
    let base = scalar(1.2, 5, 0.5);
    let mut previous: Option<Vec<f64>> = None;
    for i in 1..20 {
        let design = base.with_lambda(i as f64 * 0.05).unwrap();
        let table = voidp::backward_induction(&design, &GridSpec::default()).unwrap();
        let r: Vec<f64> = (0..design.model.stages())
            .map(|k| voidp::extract_threshold(VoiSource::Exact(&table), &design, k).unwrap())
            .collect();
        assert!(r[design.horizon()].is_infinite());
        if let Some(prev) = &previous {
            assert!(r.iter().zip(prev).all(|(now, before)| now <= before));
        }
        previous = Some(r);
    }
}

#[test]
fn always_transmitting_lowers_regulation_cost() {
    let design = scalar(1.0, 8, 0.5);
    let grid = GridSpec::default();
    let mc = MonteCarlo { seed: 5, episodes: 20_000 };
    let never = TriggerPolicy::new(TriggerKind::Never, &design, &grid).unwrap();
    let always = TriggerPolicy::new(TriggerKind::Always, &design, &grid).unwrap();
    let rn = sim::monte_carlo(&design, &never, ControlPolicy::CertaintyEquivalent, mc).unwrap();
    let ra = sim::monte_carlo(&design, &always, ControlPolicy::CertaintyEquivalent, mc).unwrap();
    assert_eq!(rn.rate.mean, 0.0);
    assert_eq!(ra.rate.mean, 1.0);
    assert!(ra.regulation.mean < rn.regulation.mean);
}
