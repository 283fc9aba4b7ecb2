use duplex_core::frontend::{cmvn, stack_downsample};
use duplex_core::graph::{Graph, Var};
use duplex_core::optim::{AdamConfig, AdamState};
use duplex_core::tensor::{layer_norm_rows, softmax_rows};
use duplex_core::{FeatureSequence, ParamStore, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| Tensor::matrix(rows, cols, v.into_iter().map(|x| x * scale).collect()).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 7, 1e3)) {
        let p = softmax_rows(&x);
        for i in 0..4 {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn layer_norm_standardizes(x in matrix(3, 8, 10.0)) {
        let gain = vec![1.0; 8];
        let bias = vec![0.0; 8];
        let (y, _, _) = layer_norm_rows(&x, &gain, &bias, 1e-12).unwrap();
        for i in 0..3 {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cmvn_is_idempotent(v in proptest::collection::vec(-5.0..5.0f64, 6 * 3)) {
        let fs = FeatureSequence::new(v, 3, 10.0, false).unwrap();
        let once = cmvn(&fs).unwrap();
        let twice = cmvn(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stacking_frame_count(t in 1usize..30, stack in 1usize..5, factor in 1usize..5) {
        let fs = FeatureSequence::new((0..t * 2).map(|i| i as f64).collect(), 2, 10.0, false).unwrap();
        let out = stack_downsample(&fs, stack, factor).unwrap();
        prop_assert_eq!(out.num_frames(), t.div_ceil(factor));
        prop_assert_eq!(out.dim(), 2 * stack);
        // Last block of each output frame is the kept input frame.
        for (o, kept) in (0..t).step_by(factor).enumerate() {
            prop_assert_eq!(&out.frame(o)[2 * (stack - 1)..], fs.frame(kept));
        }
    }
}

#[test]
fn seeded_step_is_bit_identical() {
    use rand::SeedableRng;
    let run = || {
        let mut ps = ParamStore::new();
        let w = ps.insert("w", Tensor::from_rows(&[vec![0.5, -0.25], vec![1.5, 2.0]])).unwrap();
        let grads = {
            let mut g = Graph::with_dropout(&ps, rand_chacha::ChaCha8Rng::seed_from_u64(4));
            let x = g.dropout(Var::Param(w), 0.3);
            let y = g.mul(x, Var::Param(w)).unwrap();
            let l = g.sum(y);
            g.backward(l).unwrap()
        };
        let mut adam = AdamState::new(&ps);
        adam.step(&mut ps, &grads, &AdamConfig::default(), 0.01).unwrap();
        ps.get(w).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_examples() {
    let mut ps = ParamStore::new();
    let w = ps.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let unused = ps.insert("unused", Tensor::vector(vec![3.0])).unwrap();
    let mut g = Graph::new(&ps);
    let sq = g.mul(Var::Param(w), Var::Param(w)).unwrap();
    let l = g.sum(sq);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
    assert_eq!(grads.get(unused).data(), &[0.0]);
    assert!(g.backward(sq).is_err(), "non-scalar loss");
}
