mod support;

use support::{max_abs_diff, random_tensor, rng, tiny_batches};
use yieldnet::model::{
    build_single_head, build_yieldnet, load_yieldnet, save_yieldnet, CropBatch, Variant, YieldNet, YieldNetConfig,
};
use yieldnet::synth::{synth_dataset, WorldParams};
use yieldnet::tensor::{LayerSpec, Mode, ModelGraph, Padding, ParamBlock, Tensor};
use yieldnet::train::{train, TrainConfig};
use yieldnet::Crop;

fn tiny() -> YieldNet {
    build_yieldnet(&YieldNetConfig::tiny(), 3).unwrap()
}

fn inputs(n: usize, seed: u64) -> Tensor {
    random_tensor(&mut rng(seed), vec![n, 4, 5, 2])
}

#[test]
fn parameter_counts() {
    let cfg = YieldNetConfig::default();
    let joint = build_yieldnet(&cfg, 0).unwrap();
    assert_eq!(joint.count_parameters(), 1_436_050);
    let per_head: usize = joint
        .parameter_breakdown()
        .iter()
        .filter(|b| !b.shared)
        .map(|b| b.count)
        .sum::<usize>()
        / 2;
    assert_eq!(per_head, 462_521);
    for crop in Crop::ALL {
        assert_eq!(build_single_head(&cfg, crop, 0).unwrap().count_parameters(), 973_529);
    }
    let toy = ModelGraph::build(
        &[3, 3, 1],
        &[],
        &[("toy".into(), vec![LayerSpec::conv(3, 1, Padding::Valid, 1), LayerSpec::batchnorm()])],
        0,
    )
    .unwrap();
    assert_eq!(toy.count_trainable(), 12);
}

#[test]
fn backbone_weight_moves_both_crops() {
    let mut m = tiny();
    let x = inputs(2, 1);
    let before = (m.predict(Crop::Corn, &x).unwrap(), m.predict(Crop::Soybean, &x).unwrap());
    let first = m.graph().trunk_blocks()[0];
    if let ParamBlock::Affine { weights, .. } = &mut m.graph_mut().params_mut()[first] {
        weights.data_mut()[0] += 0.5;
    }
    let after = (m.predict(Crop::Corn, &x).unwrap(), m.predict(Crop::Soybean, &x).unwrap());
    assert_ne!(before.0, after.0);
    assert_ne!(before.1, after.1);
}

#[test]
fn zero_output_layer_predicts_its_bias() {
    let mut m = tiny();
    for crop in Crop::ALL {
        let head = m.head_index(crop).unwrap();
        let last = *m.graph().head_blocks(head).last().unwrap();
        if let ParamBlock::Affine { weights, bias } = &mut m.graph_mut().params_mut()[last] {
            weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
            bias.data_mut()[0] = 5.0;
        }
    }
    let x = inputs(4, 2);
    assert_eq!(m.predict(Crop::Corn, &x).unwrap(), vec![5.0; 4]);
    assert_eq!(m.predict(Crop::Soybean, &x).unwrap(), vec![5.0; 4]);
}

#[test]
fn identical_cubes_identical_predictions() {
    let m = tiny();
    let one = inputs(1, 3);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    data.extend_from_slice(one.data());
    let x = Tensor::new(vec![3, 4, 5, 2], data).unwrap();
    let p = m.predict(Crop::Soybean, &x).unwrap();
    assert!(p[0] == p[1] && p[1] == p[2]);
}

#[test]
fn output_lengths_follow_batches() {
    let mut m = tiny();
    let corn = CropBatch::new(inputs(3, 4), vec![Some(1.0); 3]).unwrap();
    let soy = CropBatch::new(inputs(2, 5), vec![Some(1.0); 2]).unwrap();
    for mode in [Mode::Train, Mode::Infer] {
        let out = m.forward(Some(&corn), Some(&soy), mode).unwrap();
        assert_eq!(out.corn.as_ref().unwrap().len(), 3);
        assert_eq!(out.soybean.as_ref().unwrap().len(), 2);
    }
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    let m = tiny();
    let bad = random_tensor(&mut rng(0), vec![2, 4, 5, 3]);
    assert!(matches!(m.predict(Crop::Corn, &bad), Err(yieldnet::Error::Dimension(_))));
}

#[test]
fn infer_forward_matches_predict() {
    let mut m = tiny();
    let (corn, soy, _) = tiny_batches(6);
    let out = m.forward(Some(&corn), Some(&soy), Mode::Infer).unwrap();
    assert_eq!(out.corn.unwrap(), m.predict(Crop::Corn, &corn.inputs).unwrap());
    assert_eq!(out.soybean.unwrap(), m.predict(Crop::Soybean, &soy.inputs).unwrap());
}

#[test]
fn joint_backbone_gradient_is_the_sum_of_crop_contributions() {
    // Infer-mode batchnorm treats rows independently, so the trunk
    // gradient of both heads together is the sum of each head alone.
    let mut m = tiny();
    let g = m.graph_mut();
    let xc = inputs(3, 7);
    let xs = inputs(2, 8);
    let gc = random_tensor(&mut rng(9), vec![3, 1]);
    let gs = random_tensor(&mut rng(10), vec![2, 1]);
    let run = |g: &mut ModelGraph, corn: bool, soy: bool| {
        g.forward_joint(&[(0, &xc), (1, &xs)], Mode::Infer).unwrap();
        let mut grads = g.zero_grads();
        g.backward_joint(&[(0, corn.then_some(&gc)), (1, soy.then_some(&gs))], &mut grads, false)
            .unwrap();
        grads
    };
    let both = run(g, true, true);
    let corn = run(g, true, false);
    let soy = run(g, false, true);
    for b in g.trunk_blocks() {
        let sum: Vec<f64> = corn[b].iter().zip(soy[b].iter()).map(|(a, c)| a + c).collect();
        let joint: Vec<f64> = both[b].iter().copied().collect();
        assert!(max_abs_diff(&joint, &sum) < 1e-12);
        assert!(corn[b].iter().any(|&v| v != 0.0) && soy[b].iter().any(|&v| v != 0.0));
    }
    // A head without an output gradient receives none.
    for b in g.head_blocks(1) {
        assert!(corn[b].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn reestimated_statistics_reproduce_a_single_batch() {
    let mut m = build_single_head(&YieldNetConfig::tiny(), Crop::Corn, 1).unwrap();
    let (corn, _, _) = tiny_batches(2);
    let train_out = m.forward(Some(&corn), None, Mode::Train).unwrap().corn.unwrap();
    m.reestimate_batchnorm(&[(Some(corn.clone()), None)]).unwrap();
    let infer = m.predict(Crop::Corn, &corn.inputs).unwrap();
    // Running variance holds the population variance, so only epsilon
    // placement separates the two.
    assert!(max_abs_diff(&train_out, &infer) < 1e-9);
}

#[test]
fn checkpoint_reproduces_predictions_bit_exactly() {
    let mut m = tiny();
    let (corn, soy, ctx) = tiny_batches(3);
    m.graph_mut().init_adam(1e-3);
    m.train_step(Some(&corn), Some(&soy), &ctx).unwrap();
    let back = load_yieldnet(&save_yieldnet(&m).unwrap()).unwrap();
    assert_eq!(back.variant(), Variant::Joint);
    for crop in Crop::ALL {
        let a = m.predict(crop, &corn.inputs).unwrap();
        let b = back.predict(crop, &corn.inputs).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.graph().adam, m.graph().adam);
}

#[test]
fn zero_iterations_leave_the_initialization() {
    let params = WorldParams {
        n_locations: 6,
        years: vec![2010, 2011],
        height: 8,
        width: 8,
        ..WorldParams::default()
    };
    let cfg = YieldNetConfig::default();
    let ds = synth_dataset(&params, cfg.bins).unwrap().dataset;
    let mut m = build_yieldnet(&cfg, 0).unwrap();
    let init = m.graph().params().to_vec();
    let hist = train(&mut m, &ds, &TrainConfig { iterations: 0, ..TrainConfig::default() }).unwrap();
    assert!(hist.steps.is_empty());
    assert_eq!(m.graph().params(), &init[..]);
}
