use cine_deblur_core::data::ErasedRegion;
use cine_deblur_core::gradcheck::GradCheck;
use cine_deblur_core::losses::*;
use cine_deblur_core::model_cascade::*;
use cine_deblur_core::tensor::{Bound, Graph, PoolMode, Tensor, Var};
use cine_deblur_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

fn tiny() -> CascadeConfig {
    CascadeConfig { growth: 2, front: [2, 2, 3, 3, 3, 3], back: [3, 3, 3, 3, 2, 2], ..CascadeConfig::paper() }
}

fn center(h: usize) -> ErasedRegion {
    ErasedRegion::centered(h / 2, h / 2, 15, (h, h)).unwrap()
}

#[test]
fn inpainting_only_touches_the_box() {
    let model = Cascade::<f64>::new(tiny(), 1).unwrap();
    let t = &model.layout.transformers[0];
    let mut img = random(&[1, 1, 32, 32], 2);
    let region = center(32);
    for y in 0..32 {
        for x in 0..32 {
            if region.contains(y, x) {
                img.data_mut()[y * 32 + x] = 0.0;
            }
        }
    }
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let erased = g.constant(img.clone());
    let out = t.inpaint_forward(&mut g, &p, erased, Some(region)).unwrap();
    assert_eq!(g.shape(out.patch), &[1, 1, 15, 15]);
    let full = g.value(out.image);
    for y in 0..32 {
        for x in 0..32 {
            let v = full.data()[y * 32 + x];
            if region.contains(y, x) {
                let (py, px) = (y - region.origin.0, x - region.origin.1);
                assert_eq!(v, g.value(out.patch).data()[py * 15 + px]);
            } else {
                assert_eq!(v, img.data()[y * 32 + x]);
            }
        }
    }
    assert!(t.inpaint_forward(&mut g, &p, erased, None).is_err());
}

#[test]
fn inpainting_gradients_match_finite_differences() {
    let model = Cascade::<f64>::new(tiny(), 2).unwrap();
    let t = model.layout.transformers[0].inpaint.clone();
    let net = FeatureNet::new(3);
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("transformer.1.inpaint")).collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| model.params.by_name(n).unwrap().clone()).collect();
    let truth = random(&[1, 1, 15, 15], 4);
    let erased = random(&[1, 1, 32, 32], 5);
    GradCheck { step: 1e-6, max_probes: 6, pooled: true, ..Default::default() }
        .run(&inputs, |g, vars| {
            let mut all: Vec<Var> = model.params.tensors().map(|t| g.constant(t.clone())).collect();
            for (n, v) in names.iter().zip(vars) {
                all[model.params.id(n).unwrap().index()] = *v;
            }
            let p = Bound::new(all);
            let transformer = Transformer { inpaint: t.clone(), transform: model.layout.transformers[0].transform.clone() };
            let x = g.constant(erased.clone());
            let out = transformer.inpaint_forward(g, &p, x, Some(center(32)))?;
            let y = g.constant(truth.clone());
            inpaint_loss(g, &net, out.patch, y, 15)
        })
        .unwrap();
}

#[test]
fn zero_transformation_weights_give_zero_warps() {
    let mut model = Cascade::<f64>::new(tiny(), 3).unwrap();
    for (name, t) in model.params.iter_mut() {
        if name.contains(".transform.") {
            t.data_mut().fill(0.0);
        }
    }
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let (a, b) = (g.constant(random(&[1, 1, 16, 16], 1)), g.constant(random(&[1, 1, 16, 16], 2)));
    let (pa, pb) = (ScalePyramid::build(&mut g, a, 3).unwrap(), ScalePyramid::build(&mut g, b, 3).unwrap());
    let out = model.layout.transformers[0].transform_multiscale(&mut g, &p, &pa, &pb).unwrap();
    assert_eq!(out.len(), 3);
    for o in out {
        assert!(g.value(o).data().iter().all(|&v| v == 0.0));
    }
}

fn multiscale_values(model: &Cascade<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let (pa, pb) = (ScalePyramid::build(&mut g, va, 3).unwrap(), ScalePyramid::build(&mut g, vb, 3).unwrap());
    let out = model.layout.transformers[1].transform_multiscale(&mut g, &p, &pa, &pb).unwrap();
    out.iter().map(|&v| g.value(v).clone()).collect()
}

#[test]
fn scale_branches_share_weights() {
    let mut model = Cascade::<f64>::new(tiny(), 4).unwrap();
    let (a, b) = (random(&[1, 1, 16, 16], 1), random(&[1, 1, 16, 16], 2));
    let before = multiscale_values(&model, &a, &b);
    let id = model.params.id("transformer.2.transform.6.b").unwrap();
    model.params.get_mut(id).data_mut()[0] += 0.25;
    let after = multiscale_values(&model, &a, &b);
    for (x, y) in before.iter().zip(&after) {
        assert!(x.max_abs_diff(y) > 0.2);
    }
}

#[test]
fn half_scale_branch_is_full_branch_on_pooled_input() {
    let model = Cascade::<f64>::new(tiny(), 5).unwrap();
    let (a, b) = (random(&[1, 1, 16, 16], 1), random(&[1, 1, 16, 16], 2));
    let ms = multiscale_values(&model, &a, &b);
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let (va, vb) = (g.constant(a), g.constant(b));
    let (qa, qb) = (g.pool2d(va, PoolMode::Avg, 2, 2).unwrap(), g.pool2d(vb, PoolMode::Avg, 2, 2).unwrap());
    let x = g.concat(&[qa, qb], 1).unwrap();
    let direct = model.layout.transformers[1].transform.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(direct), &ms[1]);
}

#[test]
fn inconsistent_pyramids_are_rejected() {
    let model = Cascade::<f64>::new(tiny(), 5).unwrap();
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let a = g.constant(random(&[1, 1, 16, 16], 1));
    let wrong = g.constant(random(&[1, 1, 6, 6], 1));
    let good = ScalePyramid::build(&mut g, a, 3).unwrap();
    let bad = ScalePyramid { levels: vec![good.levels[0], wrong, good.levels[2]] };
    let r = model.layout.transformers[0].transform_multiscale(&mut g, &p, &bad, &good);
    assert!(matches!(r, Err(Error::Shape { .. })));
}

#[test]
fn multistep_unrolls_the_transformation() {
    let model = Cascade::<f64>::new(tiny(), 6).unwrap();
    let (a, b) = (random(&[1, 1, 16, 16], 1), random(&[1, 1, 16, 16], 2));
    let ms = multiscale_values(&model, &a, &b);
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let (va, vb) = (g.constant(a), g.constant(b));
    let t = &model.layout.transformers[1];
    let one = t.transform_multistep(&mut g, &p, va, vb, 3, 1).unwrap();
    assert_eq!(one.len(), 1);
    for (x, y) in one[0].iter().zip(&ms) {
        assert_eq!(g.value(*x), y);
    }
    let three = t.transform_multistep(&mut g, &p, va, vb, 3, 3).unwrap();
    assert_eq!(three.len(), 3);
    assert!(three.iter().all(|s| s.len() == 3));
    assert!(t.transform_multistep(&mut g, &p, va, vb, 3, 0).is_err());
}

#[test]
fn multistep_gradients_flow_through_every_step() {
    let model = Cascade::<f64>::new(tiny(), 7).unwrap();
    let t = model.layout.transformers[0].clone();
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("transformer.1.transform")).collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| model.params.by_name(n).unwrap().clone()).collect();
    let (a, b) = (random(&[1, 1, 16, 16], 1), random(&[1, 1, 16, 16], 2));
    GradCheck { step: 1e-6, max_probes: 6, pooled: true, ..Default::default() }
        .run(&inputs, |g, vars| {
            let mut all: Vec<Var> = model.params.tensors().map(|t| g.constant(t.clone())).collect();
            for (n, v) in names.iter().zip(vars) {
                all[model.params.id(n).unwrap().index()] = *v;
            }
            let p = Bound::new(all);
            let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
            let steps = t.transform_multistep(g, &p, va, vb, 3, 3)?;
            // Only the last step's full-scale output: reaching earlier
            // steps requires differentiating through the recursion.
            let y = g.square(steps[2][0]);
            Ok(g.sum(y))
        })
        .unwrap();
}

#[test]
fn dense_connectivity_channel_arithmetic() {
    let cfg = CascadeConfig::paper();
    let model = Cascade::<f64>::new(cfg.clone(), 0).unwrap();
    for (net, cin) in [("inpaint", 1), ("transform", 2)] {
        for k in 1..=6 {
            let w = model.params.by_name(&format!("transformer.3.{net}.{k}.w")).unwrap();
            let co = if k == 6 { 1 } else { 16 };
            assert_eq!(w.shape(), &[co, cin + (k - 1) * 16, 3, 3]);
        }
    }
}

#[test]
fn shared_weights_are_counted_once() {
    let model = Cascade::<f64>::new(tiny(), 0).unwrap();
    let count = |prefix: &str| model.params.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum::<usize>();
    // One dense sub-network's worth of weights serves all three scales.
    let growth = 2;
    let single: usize = (0..6).map(|k| {
        let co = if k == 5 { 1 } else { growth };
        co * (2 + k * growth) * 9 + co
    }).sum();
    assert_eq!(count("transformer.1.transform."), single);
    // A recursive block holds an entry conv and one conv pair.
    let block = |ci: usize, co: usize| (co * ci * 9 + co) + 2 * (co * co * 9 + co);
    assert_eq!(count("synthesis.front.1."), block(1, 2));
    assert_eq!(count("synthesis.back.1."), block(9, 3));
    // Each transformer owns its parameters.
    assert_eq!(count("transformer.1."), count("transformer.2."));
}

fn synth_value(model: &Cascade<f64>, a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let (va, vb, vc) = (g.constant(a.clone()), g.constant(b.clone()), g.constant(c.clone()));
    let y = model.layout.synthesis.forward(&mut g, &p, va, vb, vc).unwrap();
    g.value(y).clone()
}

#[test]
fn synthesis_shape_and_input_order() {
    let model = Cascade::<f64>::new(CascadeConfig::desk(), 8).unwrap();
    let (a, b, c) = (random(&[1, 1, 16, 16], 1), random(&[1, 1, 16, 16], 2), random(&[1, 1, 16, 16], 3));
    let y = synth_value(&model, &a, &b, &c);
    assert_eq!(y.shape(), &[1, 1, 16, 16]);
    assert_eq!(synth_value(&model, &a, &b, &c), y);
    assert!(synth_value(&model, &c, &b, &a).max_abs_diff(&y) > 0.0);
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let (va, vb) = (g.constant(a), g.constant(random(&[1, 1, 8, 16], 4)));
    assert!(model.layout.synthesis.forward(&mut g, &p, va, vb, va).is_err());
}

#[test]
fn zeroed_shared_pair_silences_both_applications() {
    let mut model = Cascade::<f64>::new(tiny(), 9).unwrap();
    for (name, t) in model.params.iter_mut() {
        if name.starts_with("synthesis.front.1.a") || name.starts_with("synthesis.front.1.b") {
            t.data_mut().fill(0.0);
        }
    }
    let block = model.layout.synthesis.front[0].clone();
    let x = random(&[1, 1, 8, 8], 1);
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let vx = g.constant(x);
    let out = block.forward(&mut g, &p, vx).unwrap();
    let entry = block.entry.relu(&mut g, &p, vx).unwrap();
    // Both recursions contribute nothing: the block reduces to its entry.
    assert_eq!(g.value(out), g.value(entry));
}

fn cascade_total(g: &mut Graph<f64>, model: &Cascade<f64>, p: &Bound, net: &FeatureNet<f64>, frames: &[Tensor<f64>], hr: &Tensor<f64>) -> cine_deblur_core::Result<Var> {
    let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
    let h = frames[0].shape()[2];
    let out = model.forward(g, p, &vars, [center(h); 3])?;
    let hr = g.constant(hr.clone());
    let mut tra = Vec::new();
    for t in &out.transformers {
        let inp = inpaint_loss(g, net, t.inpainted.patch, t.true_patch, 15)?;
        let per_step: Vec<Var> = t.warps.iter().map(|w| multiscale_loss(g, net, w, hr)).collect::<cine_deblur_core::Result<_>>()?;
        let ms = multistep_loss(g, &per_step)?;
        tra.push(transformer_loss(g, inp, ms)?);
    }
    let syn = synthesis_loss(g, net, out.sr, hr)?;
    total_cascade_loss(g, [tra[0], tra[1], tra[2]], syn, 1.0, 1.0)
}

#[test]
fn cascade_bundle_and_shape() {
    let model = Cascade::<f64>::new(tiny(), 10).unwrap();
    let frames: Vec<Tensor<f64>> = (0..3).map(|s| random(&[1, 1, 32, 32], s)).collect();
    let mut g = Graph::new();
    let p = g.bind(&model.params, false);
    let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
    let out = model.forward(&mut g, &p, &vars, [center(32); 3]).unwrap();
    assert_eq!(g.shape(out.sr), &[1, 1, 32, 32]);
    assert_eq!(out.transformers.len(), 3);
    for t in &out.transformers {
        assert_eq!(t.warps.len(), 3);
        for (k, w) in t.warps.iter().flatten().enumerate() {
            let s = 32 >> (k % 3);
            assert_eq!(g.shape(*w), &[1, 1, s, s]);
        }
    }
    assert!(model.forward(&mut g, &p, &vars[..2], [center(32); 3]).is_err());
}

#[test]
fn cascade_gradients_match_finite_differences() {
    let model = Cascade::<f64>::new(tiny(), 11).unwrap();
    let net = FeatureNet::new(12);
    let frames: Vec<Tensor<f64>> = (0..3).map(|s| random(&[1, 1, 32, 32], 20 + s)).collect();
    let hr = random(&[1, 1, 32, 32], 30);
    // Every third tensor, which covers all sub-networks.
    let sampled: Vec<usize> = (0..model.params.len()).step_by(3).collect();
    let inputs: Vec<Tensor<f64>> = sampled.iter().map(|&i| model.params.tensors().nth(i).unwrap().clone()).collect();
    GradCheck { step: 1e-6, max_probes: 2, pooled: true, ..Default::default() }
        .run(&inputs, |g, vars| {
            let mut all: Vec<Var> = model.params.tensors().map(|t| g.constant(t.clone())).collect();
            for (&i, &v) in sampled.iter().zip(vars) {
                all[i] = v;
            }
            let p = Bound::new(all);
            cascade_total(g, &model, &p, &net, &frames, &hr)
        })
        .unwrap();
}
