use proptest::prelude::*;

use super::*;
use crate::error::IdcError;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn pseudo(n: usize, seed: u64) -> Vec<f64> {
    // small LCG, test-only
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
    assert!(Tensor::<f64>::new(&[], vec![]).is_err());
}

#[test]
fn matmul_hand_expanded() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = tape.constant(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_identity_and_zero() {
    let mut tape = Tape::<f64>::new();
    let data = pseudo(12, 3);
    let a = tape.constant(&[4, 3], data.clone()).unwrap();
    let eye = tape
        .constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
        .unwrap();
    let zero = tape.constant(&[3, 2], vec![0.0; 6]).unwrap();
    let ai = tape.matmul(a, eye).unwrap();
    assert_eq!(tape.value(ai), data.as_slice());
    let az = tape.matmul(a, zero).unwrap();
    assert!(tape.value(az).iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, IdcError::Shape(_)));
    assert!(msg.contains("[2, 3]") && msg.contains("by [2, 3]"), "{msg}");
}

#[test]
fn softmax_fixed_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(&[3], vec![0.0, 0.0, 0.0]).unwrap();
    let s = tape.softmax(z, 0).unwrap();
    for &v in tape.value(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    // 50-digit evaluation of exp(x_i) / sum_j exp(x_j)
    let x = tape.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let s = tape.softmax(x, 0).unwrap();
    let want = [
        0.090_030_573_170_380_458,
        0.244_728_471_054_797_65,
        0.665_240_955_774_821_89,
    ];
    for (g, w) in tape.value(s).iter().zip(want) {
        assert!((g - w).abs() < 1e-15, "{g} vs {w}");
    }
}

#[test]
fn softmax_along_first_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[2, 3], vec![1.0, 5.0, -2.0, 3.0, 5.0, 0.0]).unwrap();
    let s = tape.softmax(x, 0).unwrap();
    let v = tape.value(s);
    for col in 0..3 {
        assert!((v[col] + v[3 + col] - 1.0).abs() < 1e-12);
    }
    assert!((v[1] - 0.5).abs() < 1e-15);
    assert!(tape.softmax(x, 2).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        xs in proptest::collection::vec(-30.0f64..30.0, 12),
        c in -50.0f64..50.0,
    ) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[3, 4], xs.clone()).unwrap();
        let shifted = tape.constant(&[3, 4], xs.iter().map(|v| v + c).collect()).unwrap();
        let s = tape.softmax(x, 1).unwrap();
        let s2 = tape.softmax(shifted, 1).unwrap();
        for row in tape.value(s).chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (a, b) in tape.value(s).iter().zip(tape.value(s2)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_ops_are_pure(xs in proptest::collection::vec(-3.0f64..3.0, 8)) {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(&[2, 4], xs.clone()).unwrap();
            let g = tape.constant(&[4], vec![1.0, 0.5, 2.0, -1.0]).unwrap();
            let b = tape.constant(&[4], vec![0.0, 0.1, 0.2, 0.3]).unwrap();
            let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
            let y = tape.gelu(y);
            let y = tape.softmax(y, 1).unwrap();
            tape.value(y).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn layer_norm_cases() {
    let mut tape = Tape::<f64>::new();
    let one = tape.constant(&[4], vec![1.0; 4]).unwrap();
    let zero = tape.constant(&[4], vec![0.0; 4]).unwrap();
    let c = tape.constant(&[1, 4], vec![3.5; 4]).unwrap();
    let y = tape.layer_norm(c, one, zero, 1e-5).unwrap();
    assert!(tape.value(y).iter().all(|&v| v == 0.0));

    // mean 0, variance 1 already
    let norm = vec![1.0, -1.0, 1.0, -1.0];
    let x = tape.constant(&[1, 4], norm.clone()).unwrap();
    let y = tape.layer_norm(x, one, zero, 1e-5).unwrap();
    for (a, b) in tape.value(y).iter().zip(&norm) {
        assert!((a - b).abs() < 1e-5);
    }

    let x = tape.constant(&[2, 4], pseudo(8, 9)).unwrap();
    let y = tape.layer_norm(x, one, zero, 1e-5).unwrap();
    for row in tape.value(y).chunks(4) {
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        // eps shrinks the variance slightly below one
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn layer_norm_matches_extended_precision() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[1, 5], vec![0.3, -1.7, 2.2, 0.05, -0.4]).unwrap();
    let g = tape.constant(&[5], vec![1.5, 0.5, -1.0, 2.0, 1.0]).unwrap();
    let b = tape.constant(&[5], vec![0.1, 0.0, -0.2, 0.3, 0.0]).unwrap();
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    // two-pass mean/variance at 50 digits
    let want = [
        0.349_936_248_883_318_95,
        -0.710_136_326_192_287_19,
        -1.874_176_143_313_660_3,
        0.236_524_127_267_728_52,
        -0.388_789_720_485_162_82,
    ];
    for (a, w) in tape.value(y).iter().zip(want) {
        assert!((a - w).abs() < 1e-12, "{a} vs {w}");
    }
}

#[test]
fn gelu_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[4], vec![0.0, 10.0, 1.0, -10.0]).unwrap();
    let y = tape.gelu(x);
    let v = tape.value(y);
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 10.0).abs() < 1e-4);
    assert!((v[2] - 0.841_191_990_608_276_7).abs() < 1e-15);
    assert!(v[3].abs() < 1e-4);
}

#[test]
fn gelu_monotone_on_tested_range() {
    let mut tape = Tape::<f64>::new();
    let xs: Vec<f64> = (0..400).map(|i| -0.75 + i as f64 * 0.05).collect();
    let x = tape.constant(&[xs.len()], xs).unwrap();
    let y = tape.gelu(x);
    assert!(tape.value(y).windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn cross_entropy_cases() {
    let mut tape = Tape::<f64>::new();
    let uniform = tape.constant(&[2, 4], vec![0.7; 8]).unwrap();
    let ce = tape.cross_entropy(uniform, &[1, 3], 99).unwrap();
    assert!((tape.value(ce.loss)[0] - 4f64.ln()).abs() < 1e-12);
    assert!((4f64.ln() - 1.386294).abs() < 1e-6);

    let mut peaked = vec![0.0; 4];
    peaked[2] = 1e6;
    let p = tape.constant(&[1, 4], peaked).unwrap();
    let ce = tape.cross_entropy(p, &[2], 99).unwrap();
    assert!(tape.value(ce.loss)[0].abs() < 1e-12);

    let logits = vec![
        0.2, -1.1, 0.7, 1.9, -0.3, //
        1.4, 0.0, -2.2, 0.5, 0.8, //
        -0.6, 2.5, 0.1, -1.3, 0.4,
    ];
    let l = tape.constant(&[3, 5], logits).unwrap();
    let ce = tape.cross_entropy(l, &[3, 0, 1], 0).unwrap();
    // with pad = 0 the middle row is excluded
    assert_eq!(ce.counted, 2);
    let ce_all = tape.cross_entropy(l, &[3, 0, 1], 7).unwrap();
    // 50-digit log-sum-exp oracle
    assert!((tape.value(ce_all.loss)[0] - 0.515_476_579_869_848_94).abs() < 1e-14);
    let ce_pad = tape.cross_entropy(l, &[3, 0, 7], 7).unwrap();
    assert!((tape.value(ce_pad.loss)[0] - 0.649_552_714_494_050_37).abs() < 1e-14);
}

#[test]
fn cross_entropy_all_pad_is_zero_and_flagged() {
    let mut tape = Tape::<f64>::new();
    let l = tape.variable(&[2, 3], pseudo(6, 1)).unwrap();
    let ce = tape.cross_entropy(l, &[0, 0], 0).unwrap();
    assert!(ce.all_pad);
    assert_eq!(tape.value(ce.loss)[0], 0.0);
    tape.backward(ce.loss).unwrap();
    assert!(tape.grad(l).is_none());
    assert!(tape.cross_entropy(l, &[5, 0], 0).is_err());
}

#[test]
fn backward_simple_rules() {
    // d(x·x)/dx = 2x
    let mut tape = Tape::<f64>::new();
    let xs = vec![0.5, -1.5, 2.0];
    let x = tape.variable(&[3], xs.clone()).unwrap();
    let xx = tape.mul(x, x).unwrap();
    let s = tape.sum(xx);
    tape.backward(s).unwrap();
    for (g, v) in tape.grad(x).unwrap().iter().zip(&xs) {
        assert_eq!(*g, 2.0 * v);
    }

    // d(a·b)/da = b
    let mut tape = Tape::<f64>::new();
    let a = tape.variable(&[1], vec![3.0]).unwrap();
    let b = tape.variable(&[1], vec![-7.0]).unwrap();
    let ab = tape.mul(a, b).unwrap();
    tape.backward(ab).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[-7.0]);
    assert_eq!(tape.grad(b).unwrap(), &[3.0]);
}

#[test]
fn backward_shared_subexpression_sums_paths() {
    // y = x·x + x  =>  dy/dx = 2x + 1
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(&[2], vec![1.5, -4.0]).unwrap();
    let xx = tape.mul(x, x).unwrap();
    let y = tape.add(xx, x).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0, -7.0]);
}

#[test]
fn backward_accumulates_until_zero_grad() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(&[2], vec![1.0, 2.0]).unwrap();
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(&[2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(tape.backward(x), Err(IdcError::Shape(_))));
}

#[test]
fn frozen_inputs_get_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let wv = tape.leaf(&w);
    let x = tape.variable(&[1, 2], vec![1.0, 1.0]).unwrap();
    let y = tape.matmul(x, wv).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(wv).is_none());
    assert_eq!(tape.grad(x).unwrap(), &[3.0, 7.0]);
}

fn check<F>(f: F, params: Vec<Tensor<f64>>, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> crate::Result<Var>,
{
    let rep = grad_check(f, &params, 1e-5, tol, 1).unwrap();
    assert!(rep.passed, "{rep:?}");
    rep
}

#[test]
fn grad_check_linear_and_quadratic() {
    let c = pseudo(6, 4);
    let rep = check(
        |tp, v| {
            let k = tp.constant(&[6], c.clone())?;
            let y = tp.mul(v[0], k)?;
            Ok(tp.sum(y))
        },
        vec![t(&[6], &pseudo(6, 5))],
        1e-4,
    );
    assert!(rep.max_rel_error < 1e-8);
    let rep = check(
        |tp, v| {
            let y = tp.mul(v[0], v[0])?;
            Ok(tp.sum(y))
        },
        vec![t(&[6], &pseudo(6, 6))],
        1e-4,
    );
    assert!(rep.max_rel_error < 1e-8);
}

#[test]
fn grad_check_each_op() {
    let a = t(&[3, 4], &pseudo(12, 11));
    let b = t(&[4, 5], &pseudo(20, 12));
    let row = t(&[5], &pseudo(5, 13));
    let tile = t(&[1, 5], &pseudo(5, 14));
    check(
        |tp, v| {
            let y = tp.matmul(v[0], v[1])?;
            let y = tp.add_row(y, v[2])?;
            let y = tp.add_tiled(y, v[3])?;
            let y = tp.gelu(y);
            let w = tp.constant(&[3, 5], pseudo(15, 15))?;
            let y = tp.mul(y, w)?;
            Ok(tp.sum(y))
        },
        vec![a.clone(), b.clone(), row, tile],
        1e-4,
    );

    check(
        |tp, v| {
            let s = tp.softmax(v[0], 0)?;
            let w = tp.constant(&[3, 4], pseudo(12, 16))?;
            let y = tp.mul(s, w)?;
            let y2 = tp.sub(y, v[0])?;
            let y3 = tp.scale(y2, 0.7);
            Ok(tp.sum(y3))
        },
        vec![a.clone()],
        1e-4,
    );

    let gain = t(&[4], &[1.2, 0.8, -0.5, 1.0]);
    let bias = t(&[4], &[0.1, 0.0, -0.3, 0.2]);
    check(
        |tp, v| {
            let y = tp.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let w = tp.constant(&[3, 4], pseudo(12, 17))?;
            let y = tp.mul(y, w)?;
            Ok(tp.sum(y))
        },
        vec![a.clone(), gain, bias],
        1e-4,
    );

    check(
        |tp, v| Ok(tp.cross_entropy(v[0], &[2, 0, 3], 0)?.loss),
        vec![a.clone()],
        1e-4,
    );

    let table = t(&[5, 3], &pseudo(15, 18));
    check(
        |tp, v| {
            let g = tp.gather(v[0], &[4, 1, 4, 0])?;
            let tl = tp.tile_rows(v[1], 2)?;
            let c = tp.concat_seq(g, tl, 2)?;
            let s = tp.slice_rows(c, 1, 5)?;
            let r = tp.reshape(s, &[15])?;
            let w = tp.constant(&[15], pseudo(15, 19))?;
            let y = tp.mul(r, w)?;
            Ok(tp.sum(y))
        },
        vec![table, t(&[2, 3], &pseudo(6, 20))],
        1e-4,
    );
}

#[test]
fn grad_check_attention_layer() {
    let q = t(&[6, 4], &pseudo(24, 21));
    let k = t(&[4, 4], &pseudo(16, 22));
    let v = t(&[4, 4], &pseudo(16, 23));
    let rep = check(
        |tp, p| {
            let spec = AttentionSpec {
                heads: 2,
                batch: 2,
                causal: false,
            };
            let o = tp.attention(p[0], p[1], p[2], spec)?;
            let w = tp.constant(&[6, 4], pseudo(24, 24))?;
            let y = tp.mul(o, w)?;
            Ok(tp.sum(y))
        },
        vec![q, k, v],
        1e-4,
    );
    assert!(rep.checked == 56);

    let x = t(&[6, 4], &pseudo(24, 25));
    check(
        |tp, p| {
            let spec = AttentionSpec {
                heads: 2,
                batch: 2,
                causal: true,
            };
            let o = tp.attention(p[0], p[0], p[0], spec)?;
            let w = tp.constant(&[6, 4], pseudo(24, 26))?;
            let y = tp.mul(o, w)?;
            Ok(tp.sum(y))
        },
        vec![x],
        1e-4,
    );
}

#[test]
fn causal_attention_ignores_future_keys() {
    let base = pseudo(16, 30);
    let mut changed = base.clone();
    for v in &mut changed[12..16] {
        *v += 5.0;
    }
    let run = |data: Vec<f64>| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[4, 4], data).unwrap();
        let spec = AttentionSpec {
            heads: 1,
            batch: 1,
            causal: true,
        };
        let o = tape.attention(x, x, x, spec).unwrap();
        tape.value(o).to_vec()
    };
    let (a, b) = (run(base), run(changed));
    assert_eq!(a[..12], b[..12]);
    assert_ne!(a[12..], b[12..]);
}
