use std::rc::Rc;

use jcpa::autodiff::Tensor;
use jcpa::hetgraph::{build_graph, fit_transform, FeatureTransform, HeteroGraph};
use jcpa::jcpgnn::{
    forward, forward_batch, forward_batch_with_route, forward_fixed_channel, from_json, init_params, init_params_with,
    loss, loss_and_gradients, loss_with, mean_objective, rate_weighted_sum_rate, to_json, train, JcpgnnParams,
    MessageConvention, Mode, PairAggregate, Relaxation, Route,
    TrainConfig,
};
use jcpa::metrics::{objective, Allocation};
use jcpa::netgen::{generate_dataset, sample_instance, Dataset, FadingConfig, GeometryConfig, NetworkInstance};
use jcpa::rng::rng_from_seed;
use rand::Rng;

fn dataset(d: usize, m: usize, n: usize, seed: u64) -> Dataset {
    generate_dataset(&GeometryConfig::new(d, m), &FadingConfig::default(), n, seed).unwrap()
}

/// Random parameters with nonzero biases, on a fitted transform.
fn perturbed_params(m: usize, seed: u64, ds: &Dataset) -> JcpgnnParams {
    perturbed_params_with(m, seed, ds, PairAggregate::default())
}

fn perturbed_params_with(m: usize, seed: u64, ds: &Dataset, agg: PairAggregate) -> JcpgnnParams {
    let mut p = init_params_with(m, 3, seed, agg).unwrap();
    let mut rng = rng_from_seed(seed ^ 0xabc);
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    p.meta.transform = fit_transform(ds).unwrap();
    p
}

fn graph(inst: &NetworkInstance, p: &JcpgnnParams) -> HeteroGraph {
    p.graph(inst)
}

#[test]
fn parameter_shapes_follow_hidden_sizes() {
    let shapes = |m: &jcpa::autodiff::MlpParams| -> Vec<[usize; 2]> { m.layers.iter().map(|l| l.weight.shape()).collect() };
    let summed = init_params_with(2, 3, 7, PairAggregate::Sum).unwrap();
    assert_eq!(summed.layers.len(), 3);
    for l in &summed.layers {
        assert_eq!(shapes(&l.phi1), vec![[7, 16], [16, 32]]);
        assert_eq!(shapes(&l.alpha1), vec![[35, 16], [16, 8], [8, 2]]);
        assert_eq!(shapes(&l.alpha2), vec![[35, 16], [16, 8], [8, 1]]);
    }
    // Per-channel messages side by side: M + 1 + 32·M inputs.
    let p = init_params(2, 3, 7).unwrap();
    assert_eq!(p.meta.aggregate, PairAggregate::Concat);
    for l in &p.layers {
        assert_eq!(shapes(&l.phi1), vec![[7, 16], [16, 32]]);
        assert_eq!(shapes(&l.alpha1), vec![[67, 16], [16, 8], [8, 2]]);
        assert_eq!(shapes(&l.alpha2), vec![[67, 16], [16, 8], [8, 1]]);
    }
    assert_eq!(p, init_params(2, 3, 7).unwrap());
    assert_ne!(p, init_params(2, 3, 8).unwrap());
    for l in &p.layers {
        for mlp in [&l.phi1, &l.alpha1, &l.alpha2] {
            for lin in &mlp.layers {
                let bound = (6.0 / (lin.weight.rows() + lin.weight.cols()) as f64).sqrt();
                assert!(lin.weight.data().iter().all(|w| w.abs() <= bound));
                assert!(lin.bias.data().iter().all(|&b| b == 0.0));
            }
        }
    }
    // Parameter count depends on (M, S) only.
    assert_eq!(init_params(3, 2, 1).unwrap().n_parameters(), init_params(3, 2, 9).unwrap().n_parameters());
    assert!(init_params(0, 3, 1).is_err());
}

#[test]
fn hard_outputs_satisfy_constraints() {
    let ds = dataset(6, 3, 20, 1);
    let p = perturbed_params(3, 2, &ds);
    for inst in &ds.instances {
        let a = forward(&graph(inst, &p), &p, Mode::Hard).unwrap();
        a.validate(inst.p_max).unwrap();
        for i in 0..6 {
            assert_eq!(a.channel_row(i).iter().filter(|&&c| c == 1.0).count(), 1);
            assert_eq!(a.channel_row(i).iter().filter(|&&c| c == 0.0).count(), 2);
        }
        assert!(objective(inst, &a).unwrap() > 0.0);
    }
}

#[test]
fn zero_power_head_gives_half_power() {
    let ds = dataset(4, 2, 3, 2);
    let mut p = perturbed_params(2, 3, &ds);
    let last = p.layers.last_mut().unwrap().alpha2.layers.last_mut().unwrap();
    last.weight = Tensor::zeros(last.weight.rows(), 1);
    last.bias = Tensor::zeros(1, 1);
    for inst in &ds.instances {
        let a = forward(&graph(inst, &p), &p, Mode::Soft).unwrap();
        assert!(a.power.iter().all(|&v| v == 0.5 * p.meta.p_max));
    }
}

#[test]
fn all_routes_agree() {
    let ds = dataset(5, 3, 4, 3);
    for (convention, agg) in [
        (MessageConvention::Sender, PairAggregate::Concat),
        (MessageConvention::Receiver, PairAggregate::Concat),
        (MessageConvention::Hybrid, PairAggregate::Concat),
        (MessageConvention::Sender, PairAggregate::Sum),
        (MessageConvention::Receiver, PairAggregate::Sum),
        (MessageConvention::Hybrid, PairAggregate::Sum),
    ] {
        let mut p = perturbed_params_with(3, 4, &ds, agg);
        p.meta.convention = convention;
        let graphs: Vec<HeteroGraph> = ds.instances.iter().map(|x| graph(x, &p)).collect();
        let refs: Vec<&HeteroGraph> = graphs.iter().collect();
        let b = forward_batch_with_route(&refs, &p, Mode::Soft, Route::PerEdge).unwrap();
        for route in [Route::Factored, Route::Fused] {
            let a = forward_batch_with_route(&refs, &p, Mode::Soft, route).unwrap();
            for (x, y) in a.iter().zip(&b) {
                for (u, v) in x.channel.iter().zip(&y.channel).chain(x.power.iter().zip(&y.power)) {
                    assert!((u - v).abs() <= 1e-9, "{route:?}: {u} vs {v}");
                }
            }
        }
    }
}

#[test]
fn conventions_differ() {
    let ds = dataset(5, 2, 2, 30);
    let p = perturbed_params(2, 31, &ds);
    let g = graph(&ds.instances[0], &p);
    let outputs: Vec<_> = [MessageConvention::Sender, MessageConvention::Receiver, MessageConvention::Hybrid]
        .into_iter()
        .map(|c| {
            let mut q = p.clone();
            q.meta.convention = c;
            forward(&g, &q, Mode::Soft).unwrap()
        })
        .collect();
    assert_ne!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
    assert_ne!(outputs[1], outputs[2]);
}

#[test]
fn batched_forward_equals_single_forward() {
    let ds = dataset(4, 2, 5, 4);
    let p = perturbed_params(2, 5, &ds);
    let graphs: Vec<HeteroGraph> = ds.instances.iter().map(|x| graph(x, &p)).collect();
    let refs: Vec<&HeteroGraph> = graphs.iter().collect();
    let batched = forward_batch(&refs, &p, Mode::Soft).unwrap();
    for (g, a) in graphs.iter().zip(&batched) {
        assert_eq!(&forward(g, &p, Mode::Soft).unwrap(), a);
    }
}

#[test]
fn permutation_equivariance() {
    let ds = dataset(7, 3, 5, 5);
    let p = perturbed_params(3, 6, &ds);
    let mut rng = rng_from_seed(77);
    for inst in &ds.instances {
        let mut perm: Vec<usize> = (0..7).collect();
        for k in (1..7).rev() {
            perm.swap(k, rng.gen_range(0..=k));
        }
        let pinst = inst.permuted(&perm);
        let a = forward(&graph(inst, &p), &p, Mode::Soft).unwrap();
        let b = forward(&graph(&pinst, &p), &p, Mode::Soft).unwrap();
        for (k, &src) in perm.iter().enumerate() {
            assert!((b.power[k] - a.power[src]).abs() <= 1e-9);
            for m in 0..3 {
                assert!((b.c(k, m) - a.c(src, m)).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let p = init_params(2, 3, 1).unwrap();
    let inst = sample_instance(&GeometryConfig::new(3, 3), &FadingConfig::default(), 1).unwrap();
    let g = build_graph(&inst, &FeatureTransform::Identity);
    assert!(matches!(forward(&g, &p, Mode::Hard), Err(jcpa::Error::Dimension(_))));
}

#[test]
fn single_pair_loss_is_shannon_rate() {
    let ds = dataset(1, 2, 3, 6);
    let p = perturbed_params(2, 7, &ds);
    let inst = &ds.instances[0];
    let g = graph(inst, &p);
    let a = forward(&g, &p, Mode::Soft).unwrap();
    let l = loss_with(&[(&g, inst)], &p, Relaxation::Power).unwrap();
    // Soft channel split: Σ_m log2(1 + g_m c_m p / σ²).
    let want: f64 = -(0..2)
        .map(|m| (1.0 + inst.gain(0, 0, m) * a.c(0, m) * a.power[0] / inst.noise_power).log2())
        .sum::<f64>();
    assert!((l - want).abs() < 1e-12 * want.abs());
    // Strictly decreasing in power.
    let f = |pw: f64| -(0..2).map(|m| (1.0 + inst.gain(0, 0, m) * a.c(0, m) * pw / inst.noise_power).log2()).sum::<f64>();
    assert!(f(0.9) < f(0.5) && f(1.0) < f(0.9));
    // Rate-weighted: Σ_m c_m log2(1 + g_m p / σ²).
    let l = loss_with(&[(&g, inst)], &p, Relaxation::RateWeighted).unwrap();
    let want: f64 = -(0..2)
        .map(|m| a.c(0, m) * (1.0 + inst.gain(0, 0, m) * a.power[0] / inst.noise_power).log2())
        .sum::<f64>();
    assert!((l - want).abs() < 1e-12 * want.abs());
}

#[test]
fn loss_is_batch_mean_and_matches_objective() {
    let ds = dataset(3, 2, 2, 8);
    let p = perturbed_params(2, 9, &ds);
    let inst = &ds.instances[0];
    let g = graph(inst, &p);
    let soft = forward(&g, &p, Mode::Soft).unwrap();
    assert!(!soft.hard);
    for (relax, obj) in [
        (Relaxation::Power, objective(inst, &soft).unwrap()),
        (Relaxation::RateWeighted, rate_weighted_sum_rate(inst, &soft.channel, &soft.power)),
    ] {
        let single = loss_with(&[(&g, inst)], &p, relax).unwrap();
        let double = loss_with(&[(&g, inst), (&g, inst)], &p, relax).unwrap();
        assert!((single - double).abs() <= 1e-12 * single.abs());
        assert!((single + obj).abs() <= 1e-12 * obj.abs().max(1.0));
    }
    assert_eq!(loss(&[(&g, inst)], &p).unwrap(), loss_with(&[(&g, inst)], &p, Relaxation::RateWeighted).unwrap());
    // Both relaxations agree with the objective on one-hot channels.
    let hard = forward(&g, &p, Mode::Hard).unwrap();
    let rw = rate_weighted_sum_rate(inst, &hard.channel, &hard.power);
    assert!((rw - objective(inst, &hard).unwrap()).abs() <= 1e-12 * rw.abs());
    assert!(loss(&[], &p).is_err());
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    for relax in [Relaxation::Power, Relaxation::RateWeighted] {
        check_gradients(relax);
    }
}

fn check_gradients(relax: Relaxation) {
    let ds = dataset(3, 2, 6, 10);
    let p = perturbed_params(2, 11, &ds);
    let insts: Rc<[NetworkInstance]> = ds.instances[..2].iter().cloned().collect();
    let graphs: Vec<HeteroGraph> = insts.iter().map(|x| graph(x, &p)).collect();
    let refs: Vec<&HeteroGraph> = graphs.iter().collect();
    let members = [0usize, 1];
    let (l0, grads) = loss_and_gradients(insts.clone(), &members, &refs, &p, relax).unwrap();
    let pairs: Vec<(&HeteroGraph, &NetworkInstance)> = refs.iter().copied().zip(insts.iter()).collect();
    assert!((l0 - loss_with(&pairs, &p, relax).unwrap()).abs() < 1e-12 * l0.abs());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.tensors_mut().nth(k).unwrap().data_mut()[e] += delta;
                loss_with(&pairs, &q, relax).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.data()[e];
            let scale = fd.abs().max(an.abs());
            if scale < 1e-9 {
                continue;
            }
            // Central differences carry roundoff of about eps·|L|/h.
            let noise = 8.0 * f64::EPSILON * l0.abs() / h;
            worst = worst.max(((fd - an).abs() - noise).max(0.0) / scale);
            checked += 1;
        }
    }
    assert!(checked > 500, "checked {checked}");
    assert!(worst <= 1e-4, "{relax:?}: worst relative error {worst}");
}

#[test]
fn fixed_channel_reproduces_saturated_model() {
    let ds = dataset(4, 2, 2, 12);
    let mut p = perturbed_params(2, 13, &ds);
    // Channel heads that always emit a hard [1, 0].
    for l in &mut p.layers {
        let out = l.alpha1.layers.last_mut().unwrap();
        out.weight = Tensor::zeros(out.weight.rows(), 2);
        out.bias = Tensor::from_rows(&[vec![500.0, -500.0]]).unwrap();
    }
    let inst = &ds.instances[0];
    let g = graph(inst, &p);
    let hard = forward(&g, &p, Mode::Hard).unwrap();
    let soft = forward(&g, &p, Mode::Soft).unwrap();
    assert!(soft.channel.iter().zip(&hard.channel).all(|(a, b)| (a - b).abs() < 1e-9));
    let fixed = forward_fixed_channel(&g, &p, &hard.channel).unwrap();
    assert_eq!(fixed.power, hard.power);
    assert_eq!(fixed.channel, hard.channel);
}

#[test]
fn fixed_channel_round_robin_and_validation() {
    let ds = dataset(4, 2, 2, 14);
    let p = perturbed_params(2, 15, &ds);
    let g = graph(&ds.instances[0], &p);
    let rr = Allocation::from_assignment(&[0, 1, 0, 1], 2, vec![1.0; 4]);
    let a = forward_fixed_channel(&g, &p, &rr.channel).unwrap();
    assert_eq!(a.assignment(), vec![0, 1, 0, 1]);
    a.validate(1.0).unwrap();
    let mut bad = rr.channel.clone();
    bad[0] = 0.5;
    bad[1] = 0.5;
    assert!(forward_fixed_channel(&g, &p, &bad).is_err());
    assert!(forward_fixed_channel(&g, &p, &rr.channel[..6]).is_err());

    // D = 1: the power head sees the same inputs when the channel matches x^0 rows.
    let one = dataset(1, 2, 1, 16);
    let g1 = graph(&one.instances[0], &p);
    let plain = forward(&g1, &p, Mode::Hard).unwrap();
    let fixed = forward_fixed_channel(&g1, &p, &plain.channel).unwrap();
    assert!(fixed.power[0] > 0.0 && fixed.power[0] < 1.0);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let ds = dataset(5, 2, 3, 17);
    let p = perturbed_params(2, 18, &ds);
    let q = from_json(&to_json(&p).unwrap()).unwrap();
    assert_eq!(p, q);
    for inst in &ds.instances {
        let a = forward(&graph(inst, &p), &p, Mode::Soft).unwrap();
        let b = forward(&graph(inst, &q), &q, Mode::Soft).unwrap();
        assert_eq!(a, b);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    jcpa::jcpgnn::save_checkpoint(&p, &path).unwrap();
    assert_eq!(jcpa::jcpgnn::load_checkpoint(&path).unwrap(), p);
    // Wrong widths are rejected on load.
    let mut broken = p.clone();
    broken.layers[0].alpha2.layers.pop();
    assert!(from_json(&to_json(&broken).unwrap()).is_err());
}

#[test]
fn single_link_training_learns_full_power() {
    let train_ds = dataset(1, 2, 200, 19);
    let val_ds = dataset(1, 2, 50, 20);
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let (p, hist) = train(&train_ds, &val_ds, &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 30);
    let graphs: Vec<HeteroGraph> = val_ds.instances.iter().map(|x| graph(x, &p)).collect();
    let refs: Vec<&HeteroGraph> = graphs.iter().collect();
    let allocs = forward_batch(&refs, &p, Mode::Hard).unwrap();
    let mean_power = allocs.iter().map(|a| a.power[0]).sum::<f64>() / allocs.len() as f64;
    assert!(mean_power >= 0.95, "mean power {mean_power}");
}

#[test]
fn training_is_deterministic_and_makes_progress() {
    let train_ds = dataset(10, 2, 256, 21);
    let val_ds = dataset(10, 2, 64, 22);
    let cfg = TrainConfig {
        epochs: 5,
        seed: 4,
        ..TrainConfig::default()
    };
    let (p1, h1) = train(&train_ds, &val_ds, &cfg).unwrap();
    let (p2, h2) = train(&train_ds, &val_ds, &cfg).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert!(h1.epochs[4].train_loss < h1.epochs[0].train_loss, "{h1:?}");
    let graphs: Vec<HeteroGraph> = val_ds.instances.iter().map(|x| graph(x, &p1)).collect();
    let v = mean_objective(&p1, &graphs, &val_ds.instances, Mode::Hard).unwrap();
    assert_eq!(v, h1.epochs[h1.best_epoch - 1].val_objective);
}

#[test]
fn restarts_keep_the_best_validation_run() {
    let train_ds = dataset(6, 2, 96, 23);
    let val_ds = dataset(6, 2, 32, 24);
    let single = TrainConfig {
        epochs: 3,
        seed: 8,
        restarts: 1,
        ..TrainConfig::default()
    };
    let (p1, h1) = train(&train_ds, &val_ds, &single).unwrap();
    let (p3, h3) = train(&train_ds, &val_ds, &TrainConfig { restarts: 3, ..single.clone() }).unwrap();
    assert_eq!(h1.restart_objectives.len(), 1);
    assert_eq!(h3.restart_objectives.len(), 3);
    assert_eq!(h3.restart_objectives[0], h1.restart_objectives[0]);

    let best = h3.restart_objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(h3.restart_objectives[h3.best_restart], best);
    let graphs: Vec<HeteroGraph> = val_ds.instances.iter().map(|x| graph(x, &p3)).collect();
    assert_eq!(mean_objective(&p3, &graphs, &val_ds.instances, Mode::Hard).unwrap(), best);
    if h3.best_restart == 0 {
        assert_eq!(p1.layers, p3.layers);
    }
}
