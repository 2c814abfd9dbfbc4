//! Cross-checks of every propagation path against independent reference
//! computations: scaling-and-squaring exponentials, Kronecker sums, explicit
//! mixture assembly, and finite differences.

mod common;

use common::*;
use ctff_core::bounds::{gamma_prime, global_gamma};
use ctff_core::dense::{kl_divergence, propagate_dense, DenseDistribution, DENSE_TAIL_TOL};
use ctff_core::factored::{
    condition_point, factored_unif_step, parent_marginal, projected_multiply_m,
    projected_rate_apply,
};
use ctff_core::generators::running_example;
use ctff_core::matrix::Matrix;
use ctff_core::model::{amalgamate, restrict_for_interval_evidence, CtbnModel};
use ctff_core::poisson::poisson_weights;
use ctff_core::rkf::factored_rkf_propagate;
use ctff_core::sparse::{row_successors, sparse_multiply, sparse_unif_propagate, SparseDistribution};
use ctff_core::uniformized::uniformize;
use ctff_core::{FactoredDistribution, PropagationConfig, Truncation};
use rand::Rng;

/// Dense uniformized M of the whole model at the factored alpha.
fn dense_m(model: &CtbnModel, alpha: f64) -> Matrix {
    let q = amalgamate(model).unwrap();
    let mut m = Matrix::identity(q.n_rows());
    m.scaled_add(1.0 / alpha, &q);
    m
}

#[test]
fn amalgamation_of_independent_variables_is_kronecker_sum() {
    let model = disconnected_model(11);
    let blocks: Vec<Matrix> = (0..3).map(|i| model.cim(i, 0).clone()).collect();
    let expect = kron_sum(&blocks);
    let got = amalgamate(&model).unwrap();
    assert!(got.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn mixture_assembly_recovers_amalgamated_generator() {
    // Build M = sum_i (alpha_i/alpha) M_i directly from the CIMs, then check
    // alpha (M - I) equals the amalgamated Q.
    let model = random_three_var_model(17);
    let n = model.n_joint_states().unwrap();
    let mut alpha_i = vec![0.0f64; 3];
    for i in 0..3 {
        for cim in model.cims(i) {
            for s in 0..model.cardinality(i) {
                alpha_i[i] = alpha_i[i].max(-cim.get(s, s));
            }
        }
    }
    let alpha: f64 = alpha_i.iter().sum();
    let mut m = Matrix::zeros(n, n);
    for s in 0..n {
        let x = model.decode(s);
        let mut stride = 1;
        let mut self_p = 0.0;
        for i in 0..3 {
            let card = model.cardinality(i);
            let cim = model.cim(i, model.context_index(i, &x));
            // Per-variable M_i row from Q/alpha_i + I.
            for xj in 0..card {
                let mij = cim.get(x[i], xj) / alpha_i[i] + if xj == x[i] { 1.0 } else { 0.0 };
                if xj == x[i] {
                    self_p += alpha_i[i] / alpha * mij;
                } else {
                    let target =
                        (s as isize + (xj as isize - x[i] as isize) * stride as isize) as usize;
                    m.add_to(s, target, alpha_i[i] / alpha * mij);
                }
            }
            stride *= card;
        }
        m.add_to(s, s, self_p);
    }
    let mut q_from_m = m;
    q_from_m.scaled_add(-1.0, &Matrix::identity(n));
    q_from_m.scale(alpha);
    let q = amalgamate(&model).unwrap();
    assert!(q_from_m.max_abs_diff(&q) < 1e-9);
}

#[test]
fn dense_propagation_matches_scaling_squaring_exponential() {
    let model = running_example();
    let q = amalgamate(&model).unwrap();
    let p = DenseDistribution::new(vec![0.4, 0.1, 0.2, 0.3]).unwrap();
    for t in [0.1, 0.5, 2.0] {
        let lib = propagate_dense(&q, &p, t, DENSE_TAIL_TOL).unwrap();
        let oracle = propagate_exp(&q, p.probs(), t);
        assert!(
            max_abs_diff(lib.probs(), &oracle) < 1e-9,
            "t = {t}: {:?} vs {:?}",
            lib.probs(),
            oracle
        );
    }
}

#[test]
fn dense_propagation_satisfies_semigroup_property() {
    let model = running_example();
    let q = amalgamate(&model).unwrap();
    let p = DenseDistribution::new(vec![0.4, 0.1, 0.2, 0.3]).unwrap();
    let two_hops = propagate_dense(
        &q,
        &propagate_dense(&q, &p, 0.3, DENSE_TAIL_TOL).unwrap(),
        0.2,
        DENSE_TAIL_TOL,
    )
    .unwrap();
    let one_hop = propagate_dense(&q, &p, 0.5, DENSE_TAIL_TOL).unwrap();
    assert!(max_abs_diff(two_hops.probs(), one_hop.probs()) < 1e-9);
}

#[test]
fn densified_factored_marginals_round_trip() {
    let mut r = rng(3);
    let model = random_three_var_model(5);
    let cards = model.cardinalities();
    for _ in 0..20 {
        let fd = random_factored(&mut r, &cards);
        let dense = DenseDistribution::from_factored(&fd).unwrap();
        for v in 0..cards.len() {
            assert!(max_abs_diff(&dense.marginalize(&cards, v), fd.marginal(v)) < 1e-12);
        }
    }
}

#[test]
fn projected_multiply_is_exact_marginal_of_dense_multiply() {
    // The keystone identity: for factored input the projected multiply equals
    // the true per-variable marginal of v M.
    for (seed, model) in [(1, running_example()), (2, random_three_var_model(23))] {
        let umodel = uniformize(&model);
        let m = dense_m(&model, umodel.alpha());
        let cards = model.cardinalities();
        let mut r = rng(seed);
        for _ in 0..25 {
            let fd = random_factored(&mut r, &cards);
            let lib = projected_multiply_m(&fd, &umodel).unwrap();
            let dense = DenseDistribution::from_factored(&fd).unwrap();
            let moved = DenseDistribution::new(m.vec_mul(dense.probs())).unwrap();
            for v in 0..cards.len() {
                assert!(
                    max_abs_diff(&moved.marginalize(&cards, v), lib.marginal(v)) < 1e-9,
                    "variable {v}"
                );
            }
        }
    }
}

#[test]
fn projected_rate_apply_matches_finite_differences() {
    let model = random_three_var_model(29);
    let q = amalgamate(&model).unwrap();
    let cards = model.cardinalities();
    let mut r = rng(7);
    let fd = random_factored(&mut r, &cards);
    let d = projected_rate_apply(&fd, &model);
    let dense = DenseDistribution::from_factored(&fd).unwrap();
    let h = 1e-5;
    let fwd = propagate_exp(&q, dense.probs(), h);
    let bwd = propagate_exp(&q, dense.probs(), -h);
    for v in 0..cards.len() {
        let m_fwd = DenseDistribution::new(fwd.clone()).unwrap().marginalize(&cards, v);
        let bwd_d = DenseDistribution::new(bwd.iter().map(|x| x.max(0.0)).collect::<Vec<_>>());
        // exp(-Q h) can undershoot zero harmlessly at this step size.
        let m_bwd = match bwd_d {
            Ok(dd) => dd.marginalize(&cards, v),
            Err(_) => panic!("backward state invalid"),
        };
        for s in 0..cards[v] {
            let fd_est = (m_fwd[s] - m_bwd[s]) / (2.0 * h);
            assert!(
                (fd_est - d[v][s]).abs() < 1e-6,
                "variable {v} state {s}: {fd_est} vs {}",
                d[v][s]
            );
        }
    }
}

#[test]
fn unif_step_matches_explicit_mixture_components() {
    // Store every factored series term explicitly, average the marginals
    // with the Poisson weights, and compare against the streaming step.
    let model = running_example();
    let umodel = uniformize(&model);
    let fd = FactoredDistribution::new(vec![vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
    let l = 20;
    let (weights, tail) = poisson_weights(umodel.alpha() * 0.5, l).unwrap();
    let mut components = vec![fd.clone()];
    for _ in 0..l {
        components.push(projected_multiply_m(components.last().unwrap(), &umodel).unwrap());
    }
    let cards = model.cardinalities();
    let mut expect: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    for (beta, comp) in weights.iter().zip(&components) {
        for (e, m) in expect.iter_mut().zip(comp.marginals()) {
            for (ei, &mi) in e.iter_mut().zip(m) {
                *ei += beta * mi;
            }
        }
    }
    for e in &mut expect {
        for ei in e.iter_mut() {
            *ei /= 1.0 - tail;
        }
    }
    let got = factored_unif_step(&fd, &umodel, 0.5, l).unwrap();
    for v in 0..cards.len() {
        assert!(max_abs_diff(got.marginal(v), &expect[v]) < 1e-12);
    }
}

#[test]
fn unif_step_is_exact_without_coupling() {
    let model = disconnected_model(41);
    let umodel = uniformize(&model);
    let cards = model.cardinalities();
    let mut r = rng(13);
    let fd = random_factored(&mut r, &cards);
    let out = factored_unif_step(&fd, &umodel, 0.7, 60).unwrap();
    for v in 0..cards.len() {
        let expect = propagate_exp(model.cim(v, 0), fd.marginal(v), 0.7);
        assert!(
            max_abs_diff(out.marginal(v), &expect) < 1e-9,
            "variable {v}: {:?} vs {expect:?}",
            out.marginal(v)
        );
    }
}

#[test]
fn truncation_error_shrinks_monotonically() {
    let model = running_example();
    let umodel = uniformize(&model);
    let q = amalgamate(&model).unwrap();
    let fd = FactoredDistribution::new(vec![vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
    let p = DenseDistribution::from_factored(&fd).unwrap();
    let exact = propagate_dense(&q, &p, 0.5, DENSE_TAIL_TOL).unwrap();
    let mut prev = f64::INFINITY;
    for l in 2..=30 {
        let approx = factored_unif_step(&fd, &umodel, 0.5, l).unwrap();
        let approx_dense = DenseDistribution::from_factored(&approx).unwrap();
        let kl = kl_divergence(&exact, &approx_dense).unwrap();
        assert!(
            kl <= prev + 1e-10,
            "l = {l}: KL {kl} exceeds previous {prev}"
        );
        prev = kl;
    }
}

#[test]
fn rkf_is_exact_without_coupling() {
    let model = disconnected_model(43);
    let cards = model.cardinalities();
    let mut r = rng(19);
    let fd = random_factored(&mut r, &cards);
    let cfg = PropagationConfig {
        rkf_tol: 1e-8,
        ..Default::default()
    };
    let out = factored_rkf_propagate(&fd, &model, 1.3, &cfg).unwrap();
    for v in 0..cards.len() {
        let expect = propagate_exp(model.cim(v, 0), fd.marginal(v), 1.3);
        assert!(
            max_abs_diff(out.marginal(v), &expect) < 10.0 * cfg.rkf_tol,
            "variable {v}"
        );
    }
}

#[test]
fn product_form_joint_propagation_matches_per_variable() {
    let model = disconnected_model(47);
    let q = amalgamate(&model).unwrap();
    let cards = model.cardinalities();
    let mut r = rng(23);
    let fd = random_factored(&mut r, &cards);
    let dense = DenseDistribution::from_factored(&fd).unwrap();
    let moved = propagate_dense(&q, &dense, 0.9, DENSE_TAIL_TOL).unwrap();
    for v in 0..cards.len() {
        let expect = propagate_exp(model.cim(v, 0), fd.marginal(v), 0.9);
        assert!(max_abs_diff(&moved.marginalize(&cards, v), &expect) < 1e-9);
    }
}

#[test]
fn factored_conditioning_commutes_with_densification() {
    let model = random_three_var_model(53);
    let cards = model.cardinalities();
    let mut r = rng(29);
    let fd = random_factored(&mut r, &cards);
    let conditioned = condition_point(&fd, 1, 2).unwrap();
    let route_a = DenseDistribution::from_factored(&conditioned).unwrap();
    let (route_b, log_mass) = DenseDistribution::from_factored(&fd)
        .unwrap()
        .condition(&cards, 1, 2)
        .unwrap();
    assert!(max_abs_diff(route_a.probs(), route_b.probs()) < 1e-12);
    assert!((conditioned.log_weight() - log_mass).abs() < 1e-12);
}

#[test]
fn restricted_dense_propagation_matches_joint_filter_oracle() {
    // The worked evidence scenario, dense side only: propagate, condition on
    // B = b0, run the substochastic generator, renormalize.
    let model = running_example();
    let q = amalgamate(&model).unwrap();
    let p0 = vec![0.4, 0.1, 0.2, 0.3];

    // Oracle: the restricted joint generator written out by hand.
    let q_restricted = Matrix::from_rows(vec![
        vec![-4.0, 1.0, 0.0, 0.0],
        vec![2.0, -7.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
    ])
    .unwrap();
    let at_half = propagate_exp(&q, &p0, 0.5);
    let mut conditioned = at_half.clone();
    conditioned[2] = 0.0;
    conditioned[3] = 0.0;
    let mass: f64 = conditioned.iter().sum();
    for c in &mut conditioned {
        *c /= mass;
    }
    let unnorm = propagate_exp(&q_restricted, &conditioned, 0.5);
    let survive: f64 = unnorm.iter().sum();
    let oracle: Vec<f64> = unnorm.iter().map(|x| x / survive).collect();

    // Library route.
    let restricted = restrict_for_interval_evidence(&model, 1, 0).unwrap();
    let q_lib = amalgamate(restricted.model()).unwrap();
    let start = DenseDistribution::new(at_half).unwrap();
    let (cond, cond_lm) = start.condition(&model.cardinalities(), 1, 0).unwrap();
    let moved = propagate_dense(&q_lib, &cond, 0.5, DENSE_TAIL_TOL).unwrap();
    let (normalized, run_lm) = moved.normalize().unwrap();

    assert!(max_abs_diff(normalized.probs(), &oracle) < 1e-9);
    assert!((cond_lm - mass.ln()).abs() < 1e-9);
    assert!((run_lm - survive.ln()).abs() < 1e-9);
}

#[test]
fn successor_rows_assemble_into_uniformized_generator() {
    let model = random_three_var_model(59);
    let umodel = uniformize(&model);
    let n = model.n_joint_states().unwrap();
    let expect = dense_m(&model, umodel.alpha());
    for s in 0..n {
        let mut row = vec![0.0; n];
        for (target, p) in row_successors(&umodel, s) {
            row[target] += p;
        }
        assert!(max_abs_diff(&row, expect.row(s)) < 1e-9, "row {s}");
    }
}

#[test]
fn sparse_multiply_equals_dense_multiply() {
    let model = random_three_var_model(61);
    let umodel = uniformize(&model);
    let n = model.n_joint_states().unwrap();
    let m = dense_m(&model, umodel.alpha());
    let mut r = rng(31);
    let entries: Vec<(usize, f64)> = (0..n)
        .map(|s| (s, r.random_range(0.01..1.0)))
        .collect();
    let total: f64 = entries.iter().map(|(_, p)| p).sum();
    let v = SparseDistribution::from_entries(
        entries.into_iter().map(|(s, p)| (s, p / total)),
    )
    .unwrap();
    let out = sparse_multiply(&v, &umodel);
    let expect = m.vec_mul(&v.densify(n));
    assert!(max_abs_diff(&out.densify(n), &expect) < 1e-12);
}

#[test]
fn lossless_sparse_propagation_matches_dense_oracle() {
    let model = running_example();
    let umodel = uniformize(&model);
    let q = amalgamate(&model).unwrap();
    let cards = model.cardinalities();
    let v = SparseDistribution::one_hot(0);
    let cfg = PropagationConfig::default();
    let (out, log_mass) = sparse_unif_propagate(&v, &umodel, 1.0, &cfg, 0.0).unwrap();
    assert!(log_mass.abs() < 1e-12);
    let p = DenseDistribution::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let exact = propagate_dense(&q, &p, 1.0, DENSE_TAIL_TOL).unwrap();
    for var in 0..cards.len() {
        assert!(
            max_abs_diff(&out.marginalize(&cards, var), &exact.marginalize(&cards, var)) < 1e-9
        );
    }
}

#[test]
fn de_uniformization_round_trip_on_random_model() {
    let model = random_three_var_model(67);
    let umodel = uniformize(&model);
    for i in 0..model.n_vars() {
        for ctx in 0..model.context_count(i) {
            let card = model.cardinality(i);
            let mut q = umodel.m_cim(i, ctx).clone();
            q.scaled_add(-1.0, &Matrix::identity(card));
            q.scale(umodel.alpha_i(i));
            assert!(q.max_abs_diff(model.cim(i, ctx)) < 1e-9);
        }
    }
}

#[test]
fn gamma_prime_scales_with_rates_and_ignores_replication() {
    let base = running_example();
    let u = uniformize(&base);
    let g = global_gamma(&u).unwrap();
    let gp = gamma_prime(&u).unwrap();

    // Scaling all CIMs by c scales gamma' by c and leaves gamma unchanged.
    let scaled = CtbnModel::new(
        base.variables().to_vec(),
        (0..base.n_vars()).map(|i| base.parents(i).to_vec()).collect(),
        (0..base.n_vars())
            .map(|i| {
                base.cims(i)
                    .iter()
                    .map(|m| {
                        let mut c = m.clone();
                        c.scale(3.0);
                        c
                    })
                    .collect()
            })
            .collect(),
    )
    .unwrap();
    let us = uniformize(&scaled);
    assert!((global_gamma(&us).unwrap() - g).abs() < 1e-12);
    assert!((gamma_prime(&us).unwrap() - 3.0 * gp).abs() < 1e-12);

    // Duplicating an independent variable leaves gamma' unchanged.
    let model = disconnected_model(71);
    let u1 = uniformize(&model);
    let gp1 = gamma_prime(&u1).unwrap();
    let mut variables = model.variables().to_vec();
    variables.push(ctff_core::model::Variable {
        name: "dup".into(),
        cardinality: model.cardinality(0),
    });
    let mut parents: Vec<Vec<usize>> =
        (0..model.n_vars()).map(|i| model.parents(i).to_vec()).collect();
    parents.push(vec![]);
    let mut cims: Vec<Vec<Matrix>> =
        (0..model.n_vars()).map(|i| model.cims(i).to_vec()).collect();
    cims.push(model.cims(0).to_vec());
    let duplicated = CtbnModel::new(variables, parents, cims).unwrap();
    let u2 = uniformize(&duplicated);
    assert!((gamma_prime(&u2).unwrap() - gp1).abs() < 1e-12);
}

#[test]
fn empty_parent_weight_is_one_for_any_distribution() {
    let mut r = rng(73);
    let fd = random_factored(&mut r, &[2, 3, 2]);
    assert_eq!(parent_marginal(&fd, &[], &[]), 1.0);
}

#[test]
fn fixed_truncation_config_controls_step_length() {
    let model = running_example();
    let umodel = uniformize(&model);
    let fd = FactoredDistribution::new(vec![vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
    let cfg = PropagationConfig {
        theta: 100.0,
        truncation: Truncation::Fixed(2),
        ..Default::default()
    };
    let coarse =
        ctff_core::factored::factored_unif_propagate(&fd, &umodel, 0.5, &cfg).unwrap();
    let fine = factored_unif_step(&fd, &umodel, 0.5, 40).unwrap();
    // Both normalized, but visibly different at this truncation.
    assert!(max_abs_diff(coarse.marginal(0), fine.marginal(0)) > 1e-4);
}
