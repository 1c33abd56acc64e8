use actir::autodiff::{argmax, grad_check, softmax_xent, Tape, Tensor};
use actir::datagen::DomainRng;
use proptest::prelude::*;

fn random(rng: &mut DomainRng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform_range(-1.5, 1.5)).collect()).unwrap()
}

/// A scalar built from most tape ops: mean xent of a two-layer net plus a
/// softmax/center/abs term.
fn composite(params: &[Tensor], x: &Tensor, y: &[usize], groups: &[usize]) -> (f64, Vec<Tensor>) {
    let mut t = Tape::new();
    let w1 = t.leaf(params[0].clone());
    let b1 = t.leaf(params[1].clone());
    let w2 = t.leaf(params[2].clone());
    let xv = t.constant(x.clone());
    let h = t.matmul_t(xv, w1).unwrap();
    let h = t.add_bias(h, b1).unwrap();
    let h = t.relu(h);
    let z = t.matmul_t(h, w2).unwrap();
    let ce = t.xent_mean(z, y).unwrap();
    let p = t.softmax_rows(z);
    let c = t.center_by_group(p, groups).unwrap();
    let zt = t.transpose(z);
    let m = t.matmul(zt, c).unwrap();
    let a = t.abs(m);
    let s = t.sum(a);
    let sq = t.square(s);
    let sq = t.scale(sq, 0.3);
    let out = t.add(ce, sq).unwrap();
    let g = t.backward(out).unwrap();
    (t.value(out).item(), vec![g.wrt(w1), g.wrt(b1), g.wrt(w2)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tape_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = DomainRng::new(seed);
        let params = vec![random(&mut rng, 5, 3), random(&mut rng, 1, 5), random(&mut rng, 3, 5)];
        let x = random(&mut rng, 6, 3);
        let y: Vec<usize> = (0..6).map(|_| rng.below(3)).collect();
        let groups: Vec<usize> = (0..6).map(|i| i % 2).collect();
        let (_, analytic) = composite(&params, &x, &y, &groups);
        let err = grad_check(|ps: &[Tensor]| composite(ps, &x, &y, &groups).0, &params, &analytic, 1e-6);
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn softmax_xent_is_shift_invariant(
        logits in prop::collection::vec(-20.0f64..20.0, 2..6),
        shift in -100.0f64..100.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let y = pick.index(logits.len());
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let a = softmax_xent(&logits, y).unwrap();
        let b = softmax_xent(&shifted, y).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        prop_assert_eq!(argmax(&logits), argmax(&shifted));
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = DomainRng::new(seed);
        let a0 = random(&mut rng, 3, 4);
        let b0 = random(&mut rng, 4, 2);
        let grads = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let a = t.leaf(a0.clone());
            let b = t.leaf(b0.clone());
            let ab = t.matmul(a, b).unwrap();
            let f = t.square(ab);
            let f = t.sum(f);
            let g = t.relu(a);
            let g = t.sum(g);
            let f = t.scale(f, ca);
            let g = t.scale(g, cb);
            let out = t.add(f, g).unwrap();
            let gr = t.backward(out).unwrap();
            (gr.wrt(a), gr.wrt(b))
        };
        let (fa, fb) = grads(1.0, 0.0);
        let (ga, gb) = grads(0.0, 1.0);
        let (ha, hb) = grads(alpha, beta);
        let ea = fa.scale(alpha).add(&ga.scale(beta)).unwrap().sub(&ha).unwrap().max_abs();
        let eb = fb.scale(alpha).add(&gb.scale(beta)).unwrap().sub(&hb).unwrap().max_abs();
        prop_assert!(ea < 1e-10 && eb < 1e-10, "{ea} {eb}");
    }
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    assert_eq!(argmax(&[0.5, 0.5]), 0);
    assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
}
