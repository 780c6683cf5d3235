//! Two-layer networks on chained subarrays.

use xbar_core::fabric::{
    chain, execute_plan, load_first_layer, reference_two_layer, schedule_multilayer_nn, LinkMode, NnDrive,
};
use xbar_core::workload::{binarize_set, load_mnist, BinaryNnModel};
use xbar_core::{Design, ExecMode, SubarrayState};

fn plan(n1: (usize, usize), n2: (usize, usize)) -> xbar_core::fabric::FabricPlan {
    let d1 = Design::with_config(3, n1.0, n1.1).unwrap();
    let d2 = Design::with_config(3, n2.0, n2.1).unwrap();
    chain(vec![(d1, SubarrayState::new(n1.0, n1.1)), (d2, SubarrayState::new(n2.0, n2.1))], LinkMode::BlToWlt).unwrap()
}

fn bits(s: &str) -> Vec<bool> {
    s.bytes().map(|b| b == b'1').collect()
}

fn run(
    w1: &[Vec<bool>],
    w2: &[Vec<bool>],
    k: [usize; 2],
    images: &[Vec<bool>],
    n1: (usize, usize),
    n2: (usize, usize),
    mode: ExecMode,
) -> xbar_core::fabric::FabricOutcome {
    let mut p = plan(n1, n2);
    load_first_layer(&mut p, w1).unwrap();
    let s = schedule_multilayer_nn(w1, w2, images.len(), &p.designs[0].geometry, &p.designs[1].geometry).unwrap();
    let drive = NnDrive { thresholds: k, v_dd: None, duration: p.designs[0].cell.t_set, mode };
    execute_plan(&mut p, &s, images, &drive).unwrap()
}

#[test]
fn toy_network_matches_reference() {
    let w1 = vec![bits("1100"), bits("0110"), bits("1011")];
    let w2 = vec![bits("110"), bits("011")];
    let images: Vec<Vec<bool>> = (0..16u32).map(|x| (0..4).map(|i| x >> i & 1 == 1).collect()).collect();
    for mode in [ExecMode::Analytic, ExecMode::Oracle] {
        let out = run(&w1, &w2, [2, 1], &images, (3, 4), (4, 3), mode);
        for (i, x) in images.iter().enumerate() {
            let (h, y) = reference_two_layer(&w1, &w2, [2, 1], x);
            assert_eq!(out.hidden[i], h, "{mode:?} image {i} hidden");
            assert_eq!(out.outputs[i], y, "{mode:?} image {i} outputs");
        }
        // 4 batches of 4 images: 4 hidden + 2 output steps each
        assert_eq!(out.steps_run, 24);
        assert!(out.energy > 0.0);
    }
}

#[test]
fn identity_second_layer_passes_hidden_bits() {
    let w1 = vec![bits("1010"), bits("0101"), bits("1111")];
    let w2 = vec![bits("100"), bits("010"), bits("001")];
    let images = vec![bits("1000"), bits("1010"), bits("0101"), bits("1111"), bits("0011")];
    let out = run(&w1, &w2, [1, 1], &images, (3, 4), (3, 3), ExecMode::Analytic);
    for i in 0..images.len() {
        assert_eq!(out.outputs[i], out.hidden[i]);
    }
}

#[test]
fn zero_second_layer_weights_give_zero_outputs() {
    let w1 = vec![bits("1100"), bits("0011")];
    let w2 = vec![bits("00"), bits("00")];
    let images = vec![bits("1100"), bits("1111")];
    let mut p = plan((2, 4), (2, 2));
    load_first_layer(&mut p, &w1).unwrap();
    let s = schedule_multilayer_nn(&w1, &w2, 2, &p.designs[0].geometry, &p.designs[1].geometry).unwrap();
    // no driven input on the output steps, so layer 2 needs an explicit supply
    let drive = NnDrive { thresholds: [1, 1], v_dd: Some([0.6, 0.6]), duration: 80e-9, mode: ExecMode::Oracle };
    let out = execute_plan(&mut p, &s, &images, &drive).unwrap();
    assert!(out.outputs.iter().all(|y| y.iter().all(|b| !b)));
    assert_eq!(out.hidden, vec![vec![true, false], vec![true, true]]);
}

#[test]
fn mnist_subset_through_fabric() {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let set = load_mnist(&data.join("mnist")).unwrap();
    let model = BinaryNnModel::load(&data.join("model")).unwrap();
    let images: Vec<Vec<bool>> = binarize_set(&set, 128).into_iter().take(40).map(|im| im.pixels).collect();
    // first layer from the model, second layer a pairwise OR of its outputs
    let w1 = model.layers[0].clone();
    let h = w1.len();
    let w2: Vec<Vec<bool>> = (0..h / 2).map(|j| (0..h).map(|i| i / 2 == j).collect()).collect();
    let k = [model.thresholds[0], 1];
    let out = run(&w1, &w2, k, &images, (h, model.inputs()), (16, 16), ExecMode::Analytic);
    for (i, x) in images.iter().enumerate() {
        let (rh, ry) = reference_two_layer(&w1, &w2, k, x);
        assert_eq!(out.hidden[i], rh, "image {i}");
        assert_eq!(out.outputs[i], ry, "image {i}");
    }
    // 3 batches of up to 16 images, 5 output steps each
    assert_eq!(out.steps_run, 40 + 3 * 5);
}
