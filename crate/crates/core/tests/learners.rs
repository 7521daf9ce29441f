mod common;

use nalgebra::DMatrix;
use rand::Rng;
use tpsml::bench::protocol::{normalize_split, select_and_fit};
use tpsml::bench::split::complement;
use tpsml::bench::{loo_1nn_accuracy, make_circles, stratified_folds, BenchMethod, SplitPlan, Grids, MethodKind, SyntheticSpec};
use tpsml::data::select_rows;
use tpsml::metric::{build_pairs, mmc_train, tml_nn_train, PairCaps, TmlNnConfig};
use tpsml::svm::{ovo_predict, ovo_train, svm_train, SvmConfig};
use tpsml::tml_svm::{center_and_scale, tml_svm_train, tml_svm_train_binary, TmlSvmConfig};
use tpsml::MinMaxScaler;

fn pair_sum(f: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| common::sq_dist(&common::row(f, i), &common::row(f, j)))
        .sum()
}

#[test]
fn euclidean_loo_on_circles_matches_oracle() {
    let data = make_circles(&SyntheticSpec::circles(200, 0.05, 0)).unwrap();
    let oracle = common::loo_1nn_oracle(&data.features, &data.labels);
    assert!(oracle >= 0.95, "oracle {oracle}");
    assert_eq!(loo_1nn_accuracy(&data.features, &data.labels).unwrap(), oracle);
}

#[test]
fn tml_nn_on_small_instance_does_not_raise_objective() {
    let mut r = common::rng(12);
    let x = common::uniform_matrix(&mut r, 12, 2, -1.0, 1.0);
    let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
    let cfg = TmlNnConfig {
        lambda: 0.5,
        ..TmlNnConfig::default()
    };
    let pairs = build_pairs(&labels, cfg.pair_caps, cfg.seed).unwrap();
    // Start: L = I / √(Σ_N ‖x_i − x_j‖²), Ψ = 0.
    let j_init = pair_sum(&x, &pairs.similar) / pair_sum(&x, &pairs.dissimilar);
    let model = tml_nn_train(&x, &labels, &cfg).unwrap();
    assert!((model.report.initial_objective - j_init).abs() <= 1e-12 * j_init);
    let f = model.transform.apply_batch(&x).unwrap();
    let j = pair_sum(&f, &pairs.similar) + cfg.lambda * model.transform.psi.norm_squared();
    assert!(j <= j_init, "J {j} above initial {j_init}");
    assert!((j - model.report.objective).abs() <= 1e-9 * j.max(1.0));
    assert!(pair_sum(&f, &pairs.dissimilar) >= 1.0 - 1e-4);
}

#[test]
fn tml_nn_objective_falls_on_separable_blobs() {
    let spec = SyntheticSpec {
        generator: tpsml::bench::Generator::Blobs {
            centers: vec![vec![0.0, 0.0], vec![4.0, 0.0]],
        },
        per_class: 15,
        noise: 0.6,
        seed: 3,
    };
    let data = tpsml::bench::make_blobs(&spec).unwrap();
    let model = tml_nn_train(&data.features, &data.labels, &TmlNnConfig::default()).unwrap();
    assert!(model.report.objective <= model.report.initial_objective);
    assert!(model.report.max_violation <= 1e-4);
}

/// Twenty points, classes apart on axis 1, wide noise on axis 2.
fn axis_instance() -> (DMatrix<f64>, Vec<usize>) {
    let mut r = common::rng(20);
    let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
    let x = DMatrix::from_fn(20, 2, |i, k| {
        if k == 0 {
            2.0 * labels[i] as f64 + r.gen_range(-0.3..0.3)
        } else {
            r.gen_range(-2.0..2.0)
        }
    });
    (x, labels)
}

#[test]
fn mmc_weights_the_separating_axis_like_diagonal_grid_search() {
    let (x, labels) = axis_instance();
    let pairs = build_pairs(&labels, PairCaps::default(), 0).unwrap();
    let axis_sums = |p: &[(usize, usize)]| -> [f64; 2] {
        let mut s = [0.0; 2];
        for &(i, j) in p {
            for (k, v) in s.iter_mut().enumerate() {
                *v += (x[(i, k)] - x[(j, k)]).powi(2);
            }
        }
        s
    };
    let sp = axis_sums(&pairs.similar);
    let sn = axis_sums(&pairs.dissimilar);
    // Dense grid over diag(a, b), feasible when the different-class sum is ≥ 1.
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for ia in 0..=400 {
        for ib in 0..=400 {
            let (a, b) = (ia as f64 * 2.5e-4, ib as f64 * 2.5e-4);
            if a * sn[0] + b * sn[1] >= 1.0 {
                let obj = a * sp[0] + b * sp[1];
                if obj < best.0 {
                    best = (obj, a, b);
                }
            }
        }
    }
    assert!(best.1 > best.2, "grid optimum {best:?}");

    let metric = mmc_train(&x, &pairs, &Default::default()).unwrap();
    let m = &metric.m;
    assert!(m[(0, 0)] / m[(1, 1)] > 1.0, "M = {m}");
    let quad = |p: &[(usize, usize)]| -> f64 {
        p.iter()
            .map(|&(i, j)| {
                let d = (x.row(i) - x.row(j)).transpose();
                (d.transpose() * m * &d)[(0, 0)]
            })
            .sum()
    };
    assert!(quad(&pairs.dissimilar) >= 1.0 - 1e-6);
    // Full PSD matrices include the diagonal ones.
    assert!(quad(&pairs.similar) <= best.0 * 1.05, "mmc {} grid {}", quad(&pairs.similar), best.0);
}

/// Upper bound on the accuracy of any linear classifier on 2-D points: every
/// line through two sample points, both orientations, with points on the
/// line counted as correct.
fn best_linear_accuracy_bound(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = x.nrows();
    let pos = y.iter().filter(|&&v| v > 0.0).count();
    let mut best = pos.max(n - pos);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (x[(j, 0)] - x[(i, 0)], x[(j, 1)] - x[(i, 1)]);
            let (mut plus, mut minus) = (0, 0);
            for k in 0..n {
                let side = dx * (x[(k, 1)] - x[(i, 1)]) - dy * (x[(k, 0)] - x[(i, 0)]);
                if side == 0.0 {
                    plus += 1;
                    minus += 1;
                } else if (side > 0.0) == (y[k] > 0.0) {
                    plus += 1;
                } else {
                    minus += 1;
                }
            }
            best = best.max(plus).max(minus);
        }
    }
    best as f64 / n as f64
}

#[test]
fn tml_svm_separates_circles_where_linear_svm_cannot() {
    let data = make_circles(&SyntheticSpec::circles(200, 0.05, 0)).unwrap();
    let folds = stratified_folds(&data.labels, 3, 0).unwrap();
    let tr = complement(&folds, 0);
    let (xtr, xte) = (select_rows(&data.features, &tr), select_rows(&data.features, &folds[0]));
    let sign = |l: usize| if l == 0 { 1.0 } else { -1.0 };
    let ytr: Vec<f64> = tr.iter().map(|&i| sign(data.labels[i])).collect();
    let yte: Vec<f64> = folds[0].iter().map(|&i| sign(data.labels[i])).collect();
    let acc = |pred: Vec<f64>| pred.iter().zip(&yte).filter(|(a, b)| a == b).count() as f64 / yte.len() as f64;

    let cfg = TmlSvmConfig {
        c1: 32.0,
        c2: 1e-3,
        ..TmlSvmConfig::default()
    };
    let model = tml_svm_train_binary(&xtr, &ytr, &cfg).unwrap();
    let tml = acc((0..xte.nrows())
        .map(|i| {
            let f = model.map(&common::row(&xte, i)).unwrap();
            model.svm.margin(f.as_slice()).unwrap().signum()
        })
        .collect());

    let (xc, info) = center_and_scale(&xtr).unwrap();
    let linear_model = svm_train(&xc, &ytr, &SvmConfig::with_c(32.0)).unwrap();
    let linear = acc((0..xte.nrows())
        .map(|i| {
            let z = info.apply_row(&common::row(&xte, i)).unwrap();
            linear_model.margin(&z).unwrap().signum()
        })
        .collect());
    let bound = best_linear_accuracy_bound(&xte, &yte);
    assert!(tml >= 0.95, "TML-SVM test accuracy {tml}");
    assert!(linear <= 0.6, "linear SVM test accuracy {linear}");
    assert!(linear <= bound, "linear {linear} above exhaustive bound {bound}");
}

/// The split is the first run of the benchmark plan with master seed 0.
#[test]
#[ignore = "single-split outcome depends on the split seed; the averaged comparison runs in the acceptance suite"]
fn wine_single_split_tml_svm_beats_linear_svm() {
    let data = common::bundled("wine.csv");
    let plan = SplitPlan::new(1, 0);
    let seed = plan.run_seeds()[0];
    let folds = plan.folds_for(&data.labels, seed).unwrap();
    let tr = complement(&folds, 0);
    let (xtr, xte) = normalize_split(&select_rows(&data.features, &tr), &select_rows(&data.features, &folds[0])).unwrap();
    let ytr: Vec<usize> = tr.iter().map(|&i| data.labels[i]).collect();
    let yte: Vec<usize> = folds[0].iter().map(|&i| data.labels[i]).collect();
    let mut scores = Vec::new();
    for kind in [MethodKind::TmlSvm, MethodKind::LinearSvm] {
        let method = BenchMethod::new(kind, Grids::desk());
        let (_, pred) = select_and_fit(&method, &xtr, &ytr, &xte, 3, seed).unwrap();
        scores.push(common::accuracy(&pred, &yte));
    }
    assert!(scores[0] > scores[1], "tml-svm {} vs l-svm {}", scores[0], scores[1]);
}

#[test]
fn frozen_transform_reduces_to_linear_svm() {
    for seed in 0..30 {
        let inst = common::qp::random_instance(200 + seed);
        if inst.x.nrows() < 4 {
            continue;
        }
        let cfg = TmlSvmConfig {
            c1: inst.c,
            freeze_linear: true,
            freeze_psi: true,
            ..TmlSvmConfig::default()
        };
        let Ok(frozen) = tml_svm_train_binary(&inst.x, &inst.y, &cfg) else {
            continue;
        };
        let (xc, _) = center_and_scale(&inst.x).unwrap();
        let plain = svm_train(&xc, &inst.y, &SvmConfig::with_c(inst.c)).unwrap();
        assert!((&frozen.svm.w - &plain.w).amax() <= 1e-8, "seed {seed}");
        assert!((frozen.svm.b - plain.b).abs() <= 1e-8, "seed {seed}");
        // Same objective as the independent QP solution on the centered rows.
        let (w, b) = common::qp::svm_primal(&xc, &inst.y, inst.c);
        let oracle = common::qp::svm_objective(&xc, &inst.y, inst.c, &w, b);
        let ours = frozen.svm.primal_objective(&xc, &inst.y);
        assert!((ours - oracle).abs() <= 1e-5 * oracle.abs().max(1e-12), "seed {seed}");
    }
}

#[test]
fn frozen_psi_gives_mahalanobis_distances() {
    let iris = common::bundled("iris.csv");
    let x = MinMaxScaler::fit(&iris.features).unwrap().apply(&iris.features);
    let cfg = TmlNnConfig {
        freeze_psi: true,
        ..TmlNnConfig::default()
    };
    let model = tml_nn_train(&x, &iris.labels, &cfg).unwrap();
    assert!(model.transform.psi.iter().all(|&v| v == 0.0));
    let l = &model.transform.linear;
    let m = l.transpose() * l;
    let f = model.transform.apply_batch(&x).unwrap();
    for i in (0..x.nrows()).step_by(7) {
        for j in 0..x.nrows() {
            let (fi, fj) = (common::row(&f, i), common::row(&f, j));
            let learned = common::sq_dist(&fi, &fj).sqrt();
            let maha =
                tpsml::metric::mahalanobis_distance(&m, &common::row(&x, i), &common::row(&x, j)).unwrap();
            let scale: f64 = fi.iter().chain(&fj).map(|v| v.abs()).sum();
            assert!((learned - maha).abs() <= 1e-12 * scale.max(1e-300), "pair ({i}, {j})");
        }
    }
}

#[test]
fn bundled_datasets_train_feasibly_with_monotone_traces() {
    for name in ["circles", "iris", "wine"] {
        let data = common::bundled(&format!("{name}.csv"));
        let x = MinMaxScaler::fit(&data.features).unwrap().apply(&data.features);
        let nn = tml_nn_train(&x, &data.labels, &TmlNnConfig::default()).unwrap();
        assert!(nn.transform.side_condition_residual(nn.side_conditions) <= 1e-8, "{name}");
        assert!(nn.report.max_violation <= 1e-4, "{name}");
        let svm = tml_svm_train(&x, &data.labels, &TmlSvmConfig::default()).unwrap();
        assert!(svm.max_training_reach(&x, &data.labels).unwrap() <= 1.0 + 1e-4, "{name}");
        for (pair, m) in &svm.bank.members {
            assert!(m.transform.side_condition_residual(svm.side_conditions) <= 1e-8);
            for w in m.report.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "{name} {pair:?}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn three_blob_ovo_with_tml_svm_members() {
    let spec = SyntheticSpec {
        generator: tpsml::bench::Generator::Blobs {
            centers: vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]],
        },
        per_class: 12,
        noise: 0.5,
        seed: 2,
    };
    let data = tpsml::bench::make_blobs(&spec).unwrap();
    let bank = ovo_train(&data.features, &data.labels, 3, |_, x, y| {
        tml_svm_train_binary(x, y, &TmlSvmConfig::default())
    })
    .unwrap();
    let pred: Vec<usize> = (0..data.len())
        .map(|i| ovo_predict(&bank, &common::row(&data.features, i)).unwrap())
        .collect();
    assert!(common::accuracy(&pred, &data.labels) >= 0.95);
}
