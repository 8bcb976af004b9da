//! Finite-difference checks of every backward kernel and of the whole
//! network, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sinnet_core::autograd::{Exec, ParamSet, Tape, Var};
use sinnet_core::model::SinNet;
use sinnet_core::{Shape, Tensor};

const H: f64 = 1e-3;
const OP_TOL: f64 = 1e-4;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Builds `f(inputs)` on a fresh tape, reduces it to `sum(out * probe)` and
/// returns the loss, the gradients of each input and the kink signature.
fn run<F>(inputs: &[Tensor<f64>], probe: &Tensor<f64>, f: &F) -> (f64, Vec<Tensor<f64>>, u64)
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let prod = tape.mul_const(out, probe.clone()).unwrap();
    let loss = tape.sum(prod);
    let value = tape.get(loss).data()[0];
    let grads = tape.backward(loss).unwrap();
    let g = vars.iter().map(|v| grads.wrt(*v).unwrap().clone()).collect();
    (value, g, tape.kink_signature())
}

/// Central differences on every element of every input, skipping elements
/// whose perturbation moves the computation onto another linear piece.
fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, f: F, seed: u64)
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars);
        tape.get(out).shape()
    };
    let probe = random(out_shape, &mut rng);
    let (_, analytic, sig) = run(&inputs, &probe, &f);
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[e] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[e] -= H;
            let (lp, _, sp) = run(&plus, &probe, &f);
            let (lm, _, sm) = run(&minus, &probe, &f);
            if sp != sig || sm != sig {
                continue;
            }
            let numeric = (lp - lm) / (2.0 * H);
            let a = analytic[k].data()[e];
            assert!(
                rel_err(a, numeric) < OP_TOL || (a - numeric).abs() < 1e-8,
                "{name}: input {k} element {e}: analytic {a}, numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked > 0, "{name}: every element sat on a kink");
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (ci, co, k, h, w) in [(2, 3, 3, 5, 6), (3, 2, 1, 4, 4), (1, 1, 5, 6, 5)] {
        let x = random(Shape::new(2, ci, h, w), &mut rng);
        let wt = random(Shape::new(co, ci, k, k), &mut rng);
        let b = random(Shape::new(1, co, 1, 1), &mut rng);
        check("conv2d", vec![x, wt, b], |t, v| t.conv2d(&v[0], &v[1], &v[2]).unwrap(), 2);
    }
}

#[test]
fn pooling_and_upsampling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(Shape::new(2, 2, 6, 8), &mut rng);
    check("maxpool2", vec![x.clone()], |t, v| t.maxpool2(&v[0]).unwrap(), 4);
    check("maxpool3_same", vec![x.clone()], |t, v| t.maxpool3_same(&v[0]), 5);
    let y = random(Shape::new(1, 2, 3, 4), &mut rng);
    check("upsample2", vec![y], |t, v| t.upsample2(&v[0]), 6);
}

#[test]
fn pointwise_and_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(Shape::new(2, 3, 4, 4), &mut rng);
    check("relu", vec![x.clone()], |t, v| t.relu(&v[0]), 8);
    let x3 = x.map(|v| 3.0 * v);
    check("sigmoid", vec![x3], |t, v| t.sigmoid(&v[0]), 9);
    let y = random(Shape::new(2, 1, 4, 4), &mut rng);
    check("concat", vec![x, y], |t, v| t.concat_channels(&[&v[0], &v[1]]).unwrap(), 10);
}

#[test]
fn bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = Tensor::from_fn(Shape::new(1, 1, 5, 5), |_| rng.gen_range(0.2..0.8));
    let target = Tensor::from_fn(Shape::new(1, 1, 5, 5), |[_, _, y, x]| f64::from((y + x) % 3 == 0));
    check(
        "bce",
        vec![p],
        move |t, v| t.bce_loss(v[0], target.clone()).unwrap(),
        12,
    );
}

fn network_loss(net: &SinNet<f64>, image: &Tensor<f64>, core: &Tensor<f64>, delta: &Tensor<f64>) -> (f64, u64, Option<sinnet_core::autograd::Gradients<f64>>) {
    let mut tape = Tape::with_params(net.params());
    let x = tape.input(image.clone());
    let (pc, pd) = net.forward(&mut tape, &x, None).unwrap();
    let lc = tape.bce_loss(pc, core.clone()).unwrap();
    let ld = tape.bce_loss(pd, delta.clone()).unwrap();
    let total = tape.add(lc, ld).unwrap();
    let loss = tape.get(total).data()[0];
    let sig = tape.kink_signature();
    let grads = tape.backward(total).unwrap();
    (loss, sig, Some(grads))
}

fn set_param(params: &mut ParamSet<f64>, name: &str, e: usize, v: f64) {
    let id = params.find(name).unwrap();
    params.get_mut(id).value.data_mut()[e] = v;
}

#[test]
fn whole_network_gradients() {
    let mut net = SinNet::<f64>::new(16).unwrap();
    net.init_weights(5);
    // non-zero biases so every bias gradient path is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for p in net.params_mut().iter_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(0.0..0.1);
            }
        }
    }
    let image = random(Shape::new(1, 1, 16, 16), &mut rng).map(|v| 0.5 + 0.5 * v);
    let core = Tensor::from_fn(Shape::new(1, 1, 16, 16), |[_, _, y, x]| f64::from(y < 6 && x < 6));
    let delta = Tensor::from_fn(Shape::new(1, 1, 16, 16), |[_, _, _, x]| f64::from(x > 10));

    let (_, sig, grads) = network_loss(&net, &image, &core, &delta);
    let grads = grads.unwrap();
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    let (mut checked, mut skipped) = (0, 0);
    for name in &names {
        let id = net.params().find(name).unwrap();
        let len = net.params().get(id).value.len();
        // a few elements of each tensor keep the test affordable
        for e in [0, len / 2, len - 1] {
            let orig = net.params().get(id).value.data()[e];
            set_param(net.params_mut(), name, e, orig + H);
            let (lp, sp, _) = network_loss(&net, &image, &core, &delta);
            set_param(net.params_mut(), name, e, orig - H);
            let (lm, sm, _) = network_loss(&net, &image, &core, &delta);
            set_param(net.params_mut(), name, e, orig);
            if sp != sig || sm != sig {
                skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * H);
            let a = grads.param(id).unwrap().data()[e];
            assert!(
                rel_err(a, numeric) < 1e-3 || (a - numeric).abs() < 1e-6,
                "{name}[{e}]: analytic {a}, numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked > 3 * skipped, "checked {checked}, skipped {skipped}");
}
