//! Finite-difference checks for every op and loss.

use super::*;
use crate::testkit::gradcheck::{check, project, rand_tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES: usize = 20;

/// Values bounded away from zero so ReLU kinks are never crossed.
fn away_from_zero(t: &mut Tensor1D) {
    for v in &mut t.data {
        if v.abs() < 0.05 {
            *v = 0.05f64.copysign(*v);
        }
    }
}

fn shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(2..20))
}

fn assert_passes(name: &str, worst: f64) {
    assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
}

#[test]
fn depthwise_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (b, c, l) = shape(&mut rng);
        let k = [1, 3, 5, 7, 9][rng.gen_range(0..5)];
        let mut store = ParamStore::new();
        let w = store.add_normal("w", &[c, k], 0.5, &mut rng);
        let x = rand_tensor(&mut rng, b, c, l);
        let worst = check(&[x], &store, s, false, &|g, st, ids| {
            let wn = g.param(st, w);
            let y = g.depthwise(ids[0], wn, k)?;
            project(g, y, s)
        });
        assert_passes("depthwise", worst);
    }
}

#[test]
fn pointwise_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
        let (b, c, l) = shape(&mut rng);
        let out = rng.gen_range(1..5);
        let mut store = ParamStore::new();
        let w = store.add_normal("w", &[out, c], 0.5, &mut rng);
        let bias = store.add_normal("b", &[out], 0.5, &mut rng);
        let x = rand_tensor(&mut rng, b, c, l);
        let worst = check(&[x], &store, s, false, &|g, st, ids| {
            let wn = g.param(st, w);
            let bn = g.param(st, bias);
            let y = g.pointwise(ids[0], wn, Some(bn))?;
            project(g, y, s)
        });
        assert_passes("pointwise", worst);
    }
}

#[test]
fn sepconv_gradients_with_and_without_global_context() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + s);
        let (b, c, l) = shape(&mut rng);
        let out = rng.gen_range(1..5);
        let global = s % 2 == 0;
        let mut store = ParamStore::new();
        let conv = SepConv::new(&mut store, "c", c, out, 5, global, &mut rng);
        let x = rand_tensor(&mut rng, b, c, l);
        let worst = check(&[x], &store, s, false, &|g, st, ids| {
            let y = conv.forward(g, st, ids[0])?;
            project(g, y, s)
        });
        assert_passes("sepconv", worst);
    }
}

#[test]
fn relu_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + s);
        let (b, c, l) = shape(&mut rng);
        let mut x = rand_tensor(&mut rng, b, c, l);
        away_from_zero(&mut x);
        let worst = check(&[x], &ParamStore::new(), s, false, &|g, _, ids| {
            let y = g.relu(ids[0])?;
            project(g, y, s)
        });
        assert_passes("relu", worst);
    }
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + s);
        let (b, c, l) = shape(&mut rng);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", c);
        for v in store.values_mut(bn.gamma) {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in store.values_mut(bn.beta) {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in store.values_mut(bn.running_mean) {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in store.values_mut(bn.running_var) {
            *v = rng.gen_range(0.5..2.0);
        }
        let x = rand_tensor(&mut rng, b, c, l);
        for training in [true, false] {
            let worst = check(std::slice::from_ref(&x), &store, s, training, &|g, st, ids| {
                let y = bn.forward(g, st, ids[0])?;
                project(g, y, s)
            });
            assert_passes("batchnorm", worst);
        }
    }
}

#[test]
fn dropout_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
        let (b, c, l) = shape(&mut rng);
        let x = rand_tensor(&mut rng, b, c, l);
        let worst = check(&[x], &ParamStore::new(), s, true, &|g, _, ids| {
            let y = g.dropout(ids[0], 0.3)?;
            project(g, y, s)
        });
        assert_passes("dropout", worst);
    }
}

#[test]
fn pooling_and_upsampling_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + s);
        let (b, c, _) = shape(&mut rng);
        let f = rng.gen_range(2..4);
        let l = f * rng.gen_range(1..8);
        let x = rand_tensor(&mut rng, b, c, l);
        let worst = check(std::slice::from_ref(&x), &ParamStore::new(), s, false, &|g, _, ids| {
            let y = g.max_pool(ids[0], f)?;
            project(g, y, s)
        });
        assert_passes("max_pool", worst);
        let worst = check(&[x], &ParamStore::new(), s, false, &|g, _, ids| {
            let y = g.upsample(ids[0], f)?;
            project(g, y, s)
        });
        assert_passes("upsample", worst);
    }
}

#[test]
fn structural_op_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + s);
        let (b, c, l) = shape(&mut rng);
        let c2 = rng.gen_range(1..4);
        let x = rand_tensor(&mut rng, b, c, l);
        let y = rand_tensor(&mut rng, b, c2, l);
        let z = rand_tensor(&mut rng, b, c, l);
        let worst = check(&[x.clone(), y, z], &ParamStore::new(), s, false, &|g, _, ids| {
            let cat = g.concat(&[ids[0], ids[1]])?;
            let gm = g.global_max_concat(cat)?;
            let sum = g.add(ids[0], ids[2])?;
            let sc = g.scale(sum, -1.7)?;
            let sel = g.select_channels(gm, &[0, c + c2, 0])?;
            let a = project(g, gm, s)?;
            let bb = project(g, sc, s + 1)?;
            let cc = project(g, sel, s + 2)?;
            let ab = g.add(a, bb)?;
            g.add(ab, cc)
        });
        assert_passes("structural", worst);
        let worst = check(&[x], &ParamStore::new(), s, false, &|g, _, ids| {
            let y = g.sigmoid(ids[0])?;
            project(g, y, s)
        });
        assert_passes("sigmoid", worst);
    }
}

fn probs(rng: &mut ChaCha8Rng, b: usize, c: usize, l: usize) -> Tensor1D {
    let data = (0..b * c * l).map(|_| rng.gen_range(0.05..0.95)).collect();
    Tensor1D::from_vec(b, c, l, data).unwrap()
}

#[test]
fn loss_gradients() {
    for s in 0..SHAPES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + s);
        let (b, c, l) = shape(&mut rng);
        let p = probs(&mut rng, b, c, l);
        let hard: Vec<f64> = (0..p.numel()).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect();
        let soft: Vec<f64> = (0..p.numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
        for t in [&hard, &soft] {
            let worst = check(std::slice::from_ref(&p), &ParamStore::new(), s, false, &|g, _, ids| g.bce(ids[0], t));
            assert_passes("bce", worst);
            let worst = check(std::slice::from_ref(&p), &ParamStore::new(), s, false, &|g, _, ids| g.dice(ids[0], t));
            assert_passes("dice", worst);
        }
        let y = {
            let mut y = rand_tensor(&mut rng, b, c, l);
            y.data.iter_mut().for_each(|v| *v *= 3.0);
            y
        };
        let target: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mask: Vec<bool> = (0..y.numel()).map(|_| rng.gen_bool(0.6)).collect();
        let divisors: Vec<f64> = (0..b).map(|i| if i == 1 { 0.0 } else { rng.gen_range(1.0..5.0) }).collect();
        for reduction in [L1Reduction::Mean, L1Reduction::PerSample(divisors)] {
            let worst = check(std::slice::from_ref(&y), &ParamStore::new(), s, false, &|g, _, ids| {
                g.smooth_l1(ids[0], &target, &mask, reduction.clone())
            });
            assert_passes("smooth_l1", worst);
        }
    }
}

#[test]
fn loss_closed_forms() {
    let mut g = Graph::inference();
    let y = g.input(Tensor1D::from_vec(1, 1, 2, vec![0.5, 2.0]).unwrap()).unwrap();
    let a = g.smooth_l1(y, &[0.0, 0.0], &[true, false], L1Reduction::Mean).unwrap();
    let b = g.smooth_l1(y, &[0.0, 0.0], &[false, true], L1Reduction::Mean).unwrap();
    assert_eq!(g.value(a).data[0], 0.125);
    assert_eq!(g.value(b).data[0], 1.5);

    let t = [1.0, 0.0, 1.0, 0.0];
    let p = g.input(Tensor1D::from_vec(1, 1, 4, t.to_vec()).unwrap()).unwrap();
    let bce = g.bce(p, &t).unwrap();
    let dice = g.dice(p, &t).unwrap();
    assert!(g.value(bce).data[0] < 1e-6);
    assert_eq!(g.value(dice).data[0], 0.0);
}

#[test]
fn sum_gives_unit_gradient() {
    let mut g = Graph::inference();
    let x = g.input(Tensor1D::from_vec(2, 3, 4, (0..24).map(f64::from).collect()).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.node(x).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_errors() {
    let mut g = Graph::inference();
    let x = g.input(Tensor1D::zeros(1, 2, 3)).unwrap();
    assert!(matches!(g.backward(x), Err(NnError::NonScalarLoss(_))));
    assert!(matches!(g.backward(NodeId(7)), Err(NnError::NotRecorded)));
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::inference();
    let x = g.input(Tensor1D::zeros(1, 2, 6)).unwrap();
    let y = g.input(Tensor1D::zeros(1, 2, 5)).unwrap();
    assert!(matches!(g.add(x, y), Err(NnError::Shape(_))));
    assert!(matches!(g.max_pool(y, 2), Err(NnError::Shape(_))));
    assert!(matches!(g.bce(x, &[0.0; 3]), Err(NnError::Shape(_))));
    let w = g.input(Tensor1D::zeros(1, 1, 6)).unwrap();
    assert!(matches!(g.depthwise(x, w, 4), Err(NnError::Shape(_))));
}

#[test]
fn non_finite_values_are_engine_errors() {
    let mut g = Graph::inference();
    assert!(matches!(
        g.input(Tensor1D::from_vec(1, 1, 1, vec![f64::NAN]).unwrap()),
        Err(NnError::NonFinite(_))
    ));
    let x = g.input(Tensor1D::from_vec(1, 1, 1, vec![1e300]).unwrap()).unwrap();
    assert!(matches!(g.scale(x, 1e300), Err(NnError::NonFinite(_))));
}

#[test]
fn sepconv_examples() {
    let mut store = ParamStore::new();
    let dw = store.add("dw", &[1, 3], vec![0.0, 1.0, 0.0]);
    let pw = store.add("pw", &[1, 1], vec![2.0]);
    let mut g = Graph::inference();
    let input = vec![0.3, -1.0, 2.5, 4.0];
    let x = g.input(Tensor1D::from_vec(1, 1, 4, input.clone()).unwrap()).unwrap();
    let d = g.param(&store, dw);
    let h = g.depthwise(x, d, 3).unwrap();
    assert_eq!(g.value(h).data, input);
    let p = g.param(&store, pw);
    let y = g.pointwise(h, p, None).unwrap();
    assert_eq!(g.value(y).data, input.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
}

/// Naive dense convolution: out[o][i] = b[o] + sum_c sum_j pw[o][c] dw[c][j] x[c][i + j - pad].
#[test]
fn sepconv_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (c, l, k, out) = (4, 32, 7, 3);
    let mut store = ParamStore::new();
    let conv = SepConv::new(&mut store, "c", c, out, k, false, &mut rng);
    store.values_mut(conv.bias).iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let x = rand_tensor(&mut rng, 1, c, l);
    let mut g = Graph::inference();
    let xn = g.input(x.clone()).unwrap();
    let y = conv.forward(&mut g, &store, xn).unwrap();

    let dw = store.values(conv.depthwise);
    let pw = store.values(conv.pointwise);
    let bias = store.values(conv.bias);
    let pad = (k / 2) as isize;
    for o in 0..out {
        for i in 0..l {
            let mut acc = bias[o];
            for ci in 0..c {
                for j in 0..k {
                    let src = i as isize + j as isize - pad;
                    if src >= 0 && (src as usize) < l {
                        acc += pw[o * c + ci] * dw[ci * k + j] * x.data[ci * l + src as usize];
                    }
                }
            }
            let got = g.value(y).data[o * l + i];
            assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
        }
    }
}

#[test]
fn identical_runs_give_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let unit = ConvUnit::new(&mut store, "u", 3, 4, 5, true, 0.2, &mut rng);
        let x = rand_tensor(&mut rng, 2, 3, 12);
        let mut g = Graph::training(5);
        let xn = g.input(x).unwrap();
        let y = unit.forward(&mut g, &store, xn).unwrap();
        let l = project(&mut g, y, 1).unwrap();
        let grads = g.backward(l).unwrap();
        grads
            .params()
            .iter()
            .flat_map(|(_, v)| v.iter().map(|x| x.to_bits()))
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_is_a_pure_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let unit = ConvUnit::new(&mut store, "u", 2, 3, 3, false, 0.5, &mut rng);
    let x = rand_tensor(&mut rng, 1, 2, 10);
    let eval = || {
        let mut g = Graph::inference();
        let xn = g.input(x.clone()).unwrap();
        let y = unit.forward(&mut g, &store, xn).unwrap();
        g.value(y).clone()
    };
    assert_eq!(eval(), eval());
}

#[test]
fn running_statistics_converge_to_batch_statistics() {
    // repeated training passes on one batch pull the running stats onto the
    // batch stats, after which both modes agree
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3);
    let mut x = rand_tensor(&mut rng, 4, 3, 50);
    x.data.iter_mut().for_each(|v| *v = 2.0 * *v + 1.0);
    let forward = |store: &ParamStore, g: &mut Graph| {
        let xn = g.input(x.clone()).unwrap();
        let y = bn.forward(g, store, xn).unwrap();
        g.value(y).clone()
    };
    let mut train_out = Tensor1D::zeros(1, 1, 1);
    for _ in 0..300 {
        let mut g = Graph::training(0);
        train_out = forward(&store, &mut g);
        let updates = g.take_stat_updates();
        apply_stat_updates(&mut store, &updates, BN_MOMENTUM);
    }
    let infer_out = forward(&store, &mut Graph::inference());
    let n = 200.0;
    // running var holds the unbiased estimate; scale accounts for it
    let max_diff = train_out
        .data
        .iter()
        .zip(&infer_out.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_diff < 1e-2 * (n / (n - 1.0)), "max diff {max_diff}");
}
