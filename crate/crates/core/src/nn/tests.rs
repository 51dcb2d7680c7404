use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::gradcheck::check_store;
use crate::params::{Ctx, Group, ParamStore};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    for (i, (_, p)) in store.iter_mut().enumerate() {
        let shape = p.value.shape().to_vec();
        p.value = randn(&shape, seed + i as u64).map(|v| 0.5 * v);
    }
}

fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let r = g.input(randn(&shape, seed));
    let p = g.mul(out, r).unwrap();
    g.sum(p)
}

/// Plain loops over heads, no tape.
fn attention_oracle(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    store: &ParamStore<f64>,
    p: &AttentionParams,
) -> Vec<f64> {
    let d = p.dim;
    let mm = |a: &[f64], rows: usize, w: &[f64]| {
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            for j in 0..d {
                out[r * d + j] = (0..d).map(|i| a[r * d + i] * w[i * d + j]).sum();
            }
        }
        out
    };
    let (lq, lk) = (q.rows(), k.rows());
    let qp = mm(q.data(), lq, store.get(p.wq).value.data());
    let kp = mm(k.data(), lk, store.get(p.wk).value.data());
    let vp = mm(v.data(), lk, store.get(p.wv).value.data());
    let dh = d / p.num_heads;
    let mut cat = vec![0.0; lq * d];
    for h in 0..p.num_heads {
        for i in 0..lq {
            let scores: Vec<f64> = (0..lk)
                .map(|j| {
                    (0..dh)
                        .map(|c| qp[i * d + h * dh + c] * kp[j * d + h * dh + c])
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..dh {
                cat[i * d + h * dh + c] = (0..lk).map(|j| exps[j] / z * vp[j * d + h * dh + c]).sum();
            }
        }
    }
    mm(&cat, lq, store.get(p.wo).value.data())
}

#[test]
fn attention_single_key_is_value_projection() {
    let mut store = ParamStore::<f64>::new();
    let p = AttentionParams::new(&mut store, "a", Group::TextDecoder, 4, 2, &mut rng::rng(1)).unwrap();
    let q = randn(&[3, 4], 2);
    let kv = randn(&[1, 4], 3);
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let (qv, kvv) = (cx.g.input(q), cx.g.input(kv.clone()));
    let out = multi_head_attention(&mut cx, qv, kvv, kvv, &p, None).unwrap();
    let wv = store.get(p.wv).value.data();
    let wo = store.get(p.wo).value.data();
    let vw: Vec<f64> = (0..4).map(|j| (0..4).map(|i| kv.data()[i] * wv[i * 4 + j]).sum()).collect();
    let expect: Vec<f64> = (0..4).map(|j| (0..4).map(|i| vw[i] * wo[i * 4 + j]).sum()).collect();
    for row in g.value(out).data().chunks(4) {
        for (a, b) in row.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_identical_keys_split_evenly() {
    let mut store = ParamStore::<f64>::new();
    let p = AttentionParams::new(&mut store, "a", Group::TextDecoder, 2, 1, &mut rng::rng(1)).unwrap();
    for id in [p.wq, p.wk, p.wv, p.wo] {
        store.get_mut(id).value = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
    }
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let q = cx.g.input(Tensor::from_rows(&[&[0.3, -1.2]]));
    let k = cx.g.input(Tensor::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
    let v = cx.g.input(Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]));
    let out = multi_head_attention(&mut cx, q, k, v, &p, None).unwrap();
    // weights [0.5, 0.5] -> mean of the value rows
    assert_eq!(g.value(out).data(), &[1.0, 2.0]);
}

#[test]
fn attention_matches_per_head_loop() {
    let mut store = ParamStore::<f64>::new();
    let p = AttentionParams::new(&mut store, "a", Group::TextDecoder, 4, 2, &mut rng::rng(5)).unwrap();
    let (q, k, v) = (randn(&[3, 4], 6), randn(&[3, 4], 7), randn(&[3, 4], 8));
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let (qv, kv, vv) = (cx.g.input(q.clone()), cx.g.input(k.clone()), cx.g.input(v.clone()));
    let out = multi_head_attention(&mut cx, qv, kv, vv, &p, None).unwrap();
    let expect = attention_oracle(&q, &k, &v, &store, &p);
    for (a, b) in g.value(out).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_mask_errors_and_weights() {
    let mut store = ParamStore::<f64>::new();
    let p = AttentionParams::new(&mut store, "a", Group::TextDecoder, 4, 2, &mut rng::rng(5)).unwrap();
    assert!(AttentionParams::new(&mut store, "b", Group::TextDecoder, 6, 4, &mut rng::rng(5)).is_err());
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let x = cx.g.input(randn(&[2, 4], 9));
    let bad = [false, false, true, true];
    assert!(multi_head_attention(&mut cx, x, x, x, &p, Some(&bad)).is_err());
    assert!(multi_head_attention(&mut cx, x, x, x, &p, Some(&[true])).is_err());
    let y = cx.g.input(randn(&[2, 3], 9));
    assert!(multi_head_attention(&mut cx, x, y, y, &p, None).is_err());

    // Masked logits get weight < 1e-12 even when they dominate.
    let logits = cx.g.input(Tensor::from_rows(&[&[1e4, 0.0, -3.0]]));
    let w = cx.g.masked_softmax(logits, &[false, true, true]).unwrap();
    assert!(cx.g.value(w).data()[0] < 1e-12);
}

#[test]
fn adapter_examples() {
    let mut store = ParamStore::<f64>::new();
    let a = BottleneckAdapter::new(&mut store, "ad", Group::EncoderAdapters, 2, 1, &mut rng::rng(1));
    store.get_mut(a.w_down).value = Tensor::from_rows(&[&[1.0], &[0.0]]);
    store.get_mut(a.w_up).value = Tensor::from_rows(&[&[1.0, 0.0]]);
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let x = cx.g.input(Tensor::from_rows(&[&[1.0, 0.0]]));
    let y = apply_adapter(&mut cx, x, &a).unwrap();
    let v = g.value(y).data();
    assert!((v[0] - 1.841_344_7).abs() < 1e-7, "{}", v[0]);
    assert_eq!(v[1], 0.0);

    assert_eq!(BottleneckAdapter::parameter_count(1024, 256), 525_568);
    assert_eq!(BottleneckAdapter::parameter_count(64, 16), 2_128);
    let counted: usize = store.iter().map(|(_, p)| p.value.len()).sum();
    assert_eq!(counted, BottleneckAdapter::parameter_count(2, 1));

    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let x = cx.g.input(Tensor::zeros([1, 3]));
    assert!(apply_adapter(&mut cx, x, &a).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_init_adapter_is_bitwise_identity(
        rows in 1usize..6,
        d1 in 1usize..12,
        d2 in 1usize..6,
        seed in 0u64..10_000,
        scale in 0.01f32..100.0,
    ) {
        let mut store = ParamStore::<f32>::new();
        let a = BottleneckAdapter::new(&mut store, "ad", Group::EncoderAdapters, d1, d2, &mut rng::rng(seed));
        let x: Tensor<f32> = randn(&[rows, d1], seed + 1).cast().map(|v: f32| v * scale);
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store);
        let xv = cx.g.input(x.clone());
        let y = apply_adapter(&mut cx, xv, &a).unwrap();
        prop_assert!(g.value(y).bitwise_eq(&x));
    }
}

fn mpsa_layer(store: &mut ParamStore<f64>, dim: usize, geom: PoolGeometry, seed: u64) -> MpsaLayer {
    MpsaLayer::new(store, "la", Group::LengthAdapter, dim, 2, 2 * dim, geom, &mut rng::rng(seed)).unwrap()
}

#[test]
fn mpsa_identity_geometry_keeps_length() {
    let mut store = ParamStore::<f64>::new();
    let layer = mpsa_layer(&mut store, 4, PoolGeometry::new(1, 1, 0), 1);
    let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    store.get_mut(layer.pool_weight).value = Tensor::new([4, 4], eye).unwrap();
    let x = randn(&[7, 4], 2);
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let xv = cx.g.input(x.clone());
    let pooled = layer.pool(&mut cx, xv).unwrap();
    assert!(cx.g.value(pooled).bitwise_eq(&x));
    let y = mpsa_layer_forward(&mut cx, xv, &layer).unwrap();
    assert_eq!(g.value(y).shape(), &[7, 4]);
}

#[test]
fn mpsa_output_length_and_single_pooling() {
    let mut store = ParamStore::<f64>::new();
    let layer = mpsa_layer(&mut store, 4, PoolGeometry::new(8, 8, 1), 3);
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let x = cx.g.input(randn(&[100, 4], 4));
    let before = layer.pool_calls();
    let y = mpsa_layer_forward(&mut cx, x, &layer).unwrap();
    assert_eq!(g.value(y).shape(), &[12, 4]);
    assert_eq!(layer.pool_calls() - before, 1);

    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let short = cx.g.input(randn(&[3, 4], 4));
    assert!(matches!(
        mpsa_layer_forward(&mut cx, short, &layer),
        Err(crate::Error::Geometry(_))
    ));
}

#[test]
fn mpsa_stack_composes_length_formula() {
    let geoms = [PoolGeometry::new(3, 2, 1), PoolGeometry::new(2, 2, 0), PoolGeometry::new(5, 1, 2)];
    let mut store = ParamStore::<f64>::new();
    let adapter = MpsaLengthAdapter {
        layers: geoms.iter().enumerate().map(|(i, &g)| mpsa_layer(&mut store, 4, g, i as u64)).collect(),
    };
    for len in [4usize, 9, 17, 40] {
        let expect = geoms.iter().fold(len, |l, g| (l + 2 * g.padding - g.kernel) / g.stride + 1);
        assert_eq!(adapter.out_len(len).unwrap(), expect);
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store);
        let x = cx.g.input(randn(&[len, 4], len as u64));
        let y = adapter.forward(&mut cx, x).unwrap();
        assert_eq!(g.value(y).rows(), expect);
    }
}

fn conformer(store: &mut ParamStore<f64>, dim: usize, seed: u64) -> ConformerLiteBlock {
    ConformerLiteBlock::new(store, "enc", Group::SpeechEncoder, dim, 2, 2 * dim, &mut rng::rng(seed)).unwrap()
}

#[test]
fn encoder_block_zero_adapter_matches_plain_block() {
    let mut store = ParamStore::<f32>::new();
    let mut block = ConformerLiteBlock::new(&mut store, "enc", Group::SpeechEncoder, 8, 2, 16, &mut rng::rng(1)).unwrap();
    let x: Tensor<f32> = randn(&[5, 8], 2).cast();
    let run = |block: &ConformerLiteBlock, store: &ParamStore<f32>| {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, store);
        let xv = cx.g.input(x.clone());
        let y = encoder_block_forward(&mut cx, xv, block).unwrap();
        g.value(y).clone()
    };
    let plain = run(&block, &store);
    block.adapter = Some(BottleneckAdapter::new(&mut store, "enc.adapter", Group::EncoderAdapters, 8, 2, &mut rng::rng(9)));
    assert!(run(&block, &store).bitwise_eq(&plain));
}

#[test]
fn encoder_block_degenerate_and_composition() {
    let mut store = ParamStore::<f64>::new();
    let mut block = conformer(&mut store, 8, 3);
    block.adapter = Some(BottleneckAdapter::new(&mut store, "enc.adapter", Group::EncoderAdapters, 8, 2, &mut rng::rng(4)));
    randomize(&mut store, 40);
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let one = cx.g.input(randn(&[1, 8], 5));
    let y = encoder_block_forward(&mut cx, one, &block).unwrap();
    assert_eq!(cx.g.value(y).shape(), &[1, 8]);

    let x = randn(&[6, 8], 6);
    let xv = cx.g.input(x.clone());
    let full = encoder_block_forward(&mut cx, xv, &block).unwrap();
    // Hand-composed: attention -> conv -> ffn -> adapter.
    let xv2 = cx.g.input(x);
    let h = block.attention_sublayer(&mut cx, xv2).unwrap();
    let c = block.conv_sublayer(&mut cx, h).unwrap();
    let hh = block.ffn_sublayer(&mut cx, c).unwrap();
    let manual = apply_adapter(&mut cx, hh, block.adapter.as_ref().unwrap()).unwrap();
    for (a, b) in g.value(full).data().iter().zip(g.value(manual).data()) {
        assert!((a - b).abs() < 1e-6);
    }

    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let bad = cx.g.input(randn(&[3, 5], 1));
    assert!(encoder_block_forward(&mut cx, bad, &block).is_err());
}

fn decoder(store: &mut ParamStore<f64>, dim: usize, seed: u64) -> DecoderBlock {
    DecoderBlock::new(store, "dec", Group::TextDecoder, dim, 2, 2 * dim, &mut rng::rng(seed)).unwrap()
}

#[test]
fn decoder_block_is_causal() {
    let mut store = ParamStore::<f64>::new();
    let mut block = decoder(&mut store, 8, 1);
    block.adapter = Some(BottleneckAdapter::new(&mut store, "dec.adapter", Group::DecoderAdapters, 8, 3, &mut rng::rng(2)));
    randomize(&mut store, 60);
    let enc = randn(&[4, 8], 3);
    let base = randn(&[6, 8], 4);
    let run = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &store);
        let (d, e) = (cx.g.input(t.clone()), cx.g.input(enc.clone()));
        let y = decoder_block_forward(&mut cx, d, e, &block).unwrap();
        g.value(y).clone()
    };
    let y0 = run(&base);
    for j in 0..6 {
        let mut data = base.data().to_vec();
        for c in 0..8 {
            data[j * 8 + c] += 1.0 + c as f64;
        }
        let y1 = run(&Tensor::new([6, 8], data).unwrap());
        for t in 0..6 {
            let same = y0.data()[t * 8..(t + 1) * 8] == y1.data()[t * 8..(t + 1) * 8];
            assert_eq!(same, t < j, "perturbing {j} affected {t}");
        }
    }
}

#[test]
fn decoder_block_zero_adapter_and_composition() {
    let mut store = ParamStore::<f64>::new();
    let mut block = decoder(&mut store, 8, 5);
    let (t, e) = (randn(&[5, 8], 6), randn(&[3, 8], 7));
    let run = |block: &DecoderBlock, store: &ParamStore<f64>| {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, store);
        let (d, en) = (cx.g.input(t.clone()), cx.g.input(e.clone()));
        let y = decoder_block_forward(&mut cx, d, en, block).unwrap();
        let d2 = cx.g.input(t.clone());
        let s = block.self_attention_sublayer(&mut cx, d2).unwrap();
        let c = block.cross_attention_sublayer(&mut cx, s, en).unwrap();
        let f = block.ffn_sublayer(&mut cx, c).unwrap();
        let manual = match &block.adapter {
            Some(a) => apply_adapter(&mut cx, f, a).unwrap(),
            None => f,
        };
        (g.value(y).clone(), g.value(manual).clone())
    };
    let (plain, manual) = run(&block, &store);
    for (a, b) in plain.data().iter().zip(manual.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    block.adapter = Some(BottleneckAdapter::new(&mut store, "dec.adapter", Group::DecoderAdapters, 8, 2, &mut rng::rng(8)));
    let (with_adapter, _) = run(&block, &store);
    assert!(with_adapter.bitwise_eq(&plain));
}

#[test]
fn every_block_parameter_receives_gradient() {
    let mut store = ParamStore::<f64>::new();
    let mut enc = conformer(&mut store, 8, 11);
    enc.adapter = Some(BottleneckAdapter::new(&mut store, "enc.adapter", Group::EncoderAdapters, 8, 2, &mut rng::rng(12)));
    let mut dec = decoder(&mut store, 8, 13);
    dec.adapter = Some(BottleneckAdapter::new(&mut store, "dec.adapter", Group::DecoderAdapters, 8, 2, &mut rng::rng(14)));
    let mpsa = mpsa_layer(&mut store, 8, PoolGeometry::new(3, 2, 1), 15);
    // Non-zero up-projections so the down-projections see a gradient.
    for a in [enc.adapter.as_ref().unwrap(), dec.adapter.as_ref().unwrap()] {
        store.get_mut(a.w_up).value = randn(&[2, 8], 16);
    }
    let mut g = Graph::new();
    let mut cx = Ctx::new(&mut g, &store);
    let x = cx.g.input(randn(&[9, 8], 17));
    let h = encoder_block_forward(&mut cx, x, &enc).unwrap();
    let h = mpsa_layer_forward(&mut cx, h, &mpsa).unwrap();
    let t = cx.g.input(randn(&[4, 8], 18));
    let d = decoder_block_forward(&mut cx, t, h, &dec).unwrap();
    let loss = weighted_sum(cx.g, d, 19);
    g.backward(loss).unwrap();
    store.accumulate_grads(&g);
    for (_, p) in store.iter() {
        let grad = p.grad.as_ref().unwrap_or_else(|| panic!("{} has no gradient", p.name));
        assert!(grad.iter().any(|&v| v != 0.0), "{} has zero gradient", p.name);
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let mut enc = conformer(&mut store, 8, 21);
    enc.adapter = Some(BottleneckAdapter::new(&mut store, "enc.adapter", Group::EncoderAdapters, 8, 2, &mut rng::rng(22)));
    randomize(&mut store, 23);
    let x = randn(&[5, 8], 24);
    let report = check_store(&mut store, 1e-5, |g, s| {
        let mut cx = Ctx::new(g, s);
        let xv = cx.g.input(x.clone());
        let y = encoder_block_forward(&mut cx, xv, &enc)?;
        Ok(weighted_sum(g, y, 25))
    })
    .unwrap();
    assert!(report.worst < 1e-6, "{report:?}");
}
