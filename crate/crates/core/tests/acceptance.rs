//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use incident_core::booster::{
    grow_tree, loss_derivatives, split_gain, split_threshold, train, HyperParams, LossKind, LossSpec,
    TargetTransform, TrainOptions, TreeNode,
};
use incident_core::data::{filter_outliers, Cell, FeatureMatrix, IncidentRecord, SchemaPolicy};
use incident_core::flow::{build_features, dv_sensitivity, FeatureSet, FeatureSetSpec};
use incident_core::learner::{fit, Family, LearnerSpec, Task};
use incident_core::metrics::{classification_scores, confusion, mape, r2, ConfusionCounts};
use incident_core::pipeline::{evaluate_bilevel, fit_bilevel, label, predict_bilevel_many, BiLevelConfig};
use incident_core::shapley::{
    exact_shapley, mc_shapley, mc_shapley_with_permutations, sample_background, shap_summary, EstimatorConfig,
    FnPredictor, Predictor, ValueFunction,
};
use incident_core::synth::{generate, Dataset, GeneratorConfig};
use incident_core::tuning::{
    cross_validate, kfold, nested_evaluate, stratified_folds, CvSettings, FitCounter, NestedConfig, SearchSpace,
};
use incident_core::metrics::Metric;

type Outcome = Result<String, String>;

const SEEDS: u64 = 10;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Fixed learner settings used by the synthetic experiments.
fn reference(spec: LearnerSpec) -> LearnerSpec {
    spec.with_param("max_depth", 3.0)
        .with_param("learning_rate", 0.1)
        .with_param("n_rounds", 100.0)
}

fn dataset(seed: u64) -> Dataset {
    generate(&GeneratorConfig::default().with_seed(seed)).expect("default generator config is valid")
}

/// Shuffled 80/20 split of `n` row indices.
fn split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce));
    let cut = n * 4 / 5;
    (idx[..cut].to_vec(), idx[cut..].to_vec())
}

fn pick(records: &[IncidentRecord], idx: &[usize]) -> Vec<IncidentRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Test MAPE of `spec` trained on `train` BFS features.
fn holdout_mape(spec: &LearnerSpec, d: &Dataset, train: &[IncidentRecord], test: &[IncidentRecord], seed: u64) -> f64 {
    let store = d.flow_store();
    let bfs = FeatureSetSpec::new(FeatureSet::Bfs);
    let (m, dict) = build_features::<f64>(train, &d.sections, &store, &bfs, SchemaPolicy::Learn).unwrap();
    let (mt, _) = build_features::<f64>(test, &d.sections, &store, &bfs, SchemaPolicy::Frozen(&dict)).unwrap();
    let model = fit(spec, &m, m.target(), &Default::default(), seed).unwrap();
    mape(mt.target(), &model.predict(&mt).unwrap()).unwrap()
}

// ---------------------------------------------------------------- 1

fn dyadic(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    rng.random_range(lo..=hi) as f64 / 8.0
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

fn brute_force_split(rows: &[Vec<Cell<f64>>], g: &[f64], h: &[f64], lambda: f64, mcw: f64) -> Option<Best> {
    let (gt, ht) = (g.iter().sum::<f64>(), h.iter().sum::<f64>());
    let mut best: Option<Best> = None;
    for f in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().filter_map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = split_threshold(w[0], w[1]);
            for default_left in [true, false] {
                let (mut gl, mut hl) = (0.0, 0.0);
                for (i, r) in rows.iter().enumerate() {
                    let left = match r[f] {
                        Some(v) => v < t,
                        None => default_left,
                    };
                    if left {
                        gl += g[i];
                        hl += h[i];
                    }
                }
                if hl < mcw || ht - hl < mcw {
                    continue;
                }
                let gain = split_gain(gt, ht, gl, hl, lambda, 0.0);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold: t,
                        default_left,
                    });
                }
            }
        }
    }
    best
}

fn crit1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut splits = 0;
    for trial in 0..200 {
        let n = rng.random_range(2..=12);
        let p = rng.random_range(1..=4);
        let rows: Vec<Vec<Cell<f64>>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| if rng.random_bool(0.15) { None } else { Some(rng.random_range(0..6) as f64) })
                    .collect()
            })
            .collect();
        let g: Vec<f64> = (0..n).map(|_| dyadic(&mut rng, -16, 16)).collect();
        let h: Vec<f64> = (0..n).map(|_| dyadic(&mut rng, 1, 16)).collect();
        let lambda = [0.0, 0.5, 1.0][trial % 3];
        let mcw = [0.0, 0.25][trial % 2];
        let names: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let m = FeatureMatrix::from_rows(&names, &rows).unwrap();
        let params = HyperParams {
            max_depth: 1,
            reg_lambda: lambda,
            min_child_weight: mcw,
            ..HyperParams::default()
        };
        let tree = grow_tree(&m, &g, &h, &vec![true; n], &vec![true; p], &params).unwrap();
        let expected = brute_force_split(&rows, &g, &h, lambda, mcw).filter(|b| b.gain > 0.0);
        match (&tree.nodes()[0], expected) {
            (TreeNode::Leaf { .. }, None) => {}
            (
                &TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    ..
                },
                Some(b),
            ) => {
                let (gt, ht) = (g.iter().sum::<f64>(), h.iter().sum::<f64>());
                let (mut gl, mut hl) = (0.0, 0.0);
                for (i, r) in rows.iter().enumerate() {
                    if r[feature].map_or(default_left, |v| v < threshold) {
                        gl += g[i];
                        hl += h[i];
                    }
                }
                let chosen = split_gain(gt, ht, gl, hl, lambda, 0.0);
                if chosen != b.gain || (feature, threshold, default_left) != (b.feature, b.threshold, b.default_left) {
                    return Err(format!(
                        "trial {trial}: chose f{feature}<{threshold} (left={default_left}) gain {chosen}, brute force f{}<{} (left={}) gain {}",
                        b.feature, b.threshold, b.default_left, b.gain
                    ));
                }
                splits += 1;
            }
            (node, b) => {
                return Err(format!(
                    "trial {trial}: tree root {node:?}, brute-force best gain {:?}",
                    b.map(|b| b.gain)
                ))
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("200 matrices ({splits} with a split) match the exhaustive search in {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

enum RefNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefNode>,
        right: Box<RefNode>,
    },
}

fn ref_grow(x: &[Vec<f64>], g: &[f64], rows: &[usize], depth: usize, max_depth: usize) -> RefNode {
    let leaf = || {
        let s: f64 = rows.iter().map(|&r| g[r]).sum();
        let w = -s / rows.len() as f64;
        RefNode::Leaf(if w == 0.0 { 0.0 } else { w })
    };
    if depth >= max_depth || rows.len() < 2 {
        return leaf();
    }
    // Squared loss, no regularization: gain is the drop in the sum of squared residuals / 2.
    let gt: f64 = rows.iter().map(|&r| g[r]).sum();
    let nt = rows.len() as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = w[0] / 2.0 + w[1] / 2.0;
            let t = if t > w[0] && t <= w[1] { t } else { w[1] };
            let left: Vec<usize> = rows.iter().copied().filter(|&r| x[r][f] < t).collect();
            let gl: f64 = left.iter().map(|&r| g[r]).sum();
            let nl = left.len() as f64;
            let gr = gt - gl;
            let gain = 0.5 * (gl * gl / nl + gr * gr / (nt - nl) - gt * gt / nt);
            // splits giving the same partition tie up to rounding; the first one wins
            if best.is_none_or(|b| gain - b.0 > f64::EPSILON * 16.0 * (gt * gt / nt + b.0.abs())) {
                best = Some((gain, f, t));
            }
        }
    }
    match best {
        Some((gain, f, t)) if gain > 0.0 => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[r][f] < t);
            RefNode::Split {
                feature: f,
                threshold: t,
                left: Box::new(ref_grow(x, g, &l, depth + 1, max_depth)),
                right: Box::new(ref_grow(x, g, &r, depth + 1, max_depth)),
            }
        }
        _ => leaf(),
    }
}

fn ref_predict(node: &RefNode, row: &[f64]) -> f64 {
    match node {
        RefNode::Leaf(w) => *w,
        RefNode::Split {
            feature,
            threshold,
            left,
            right,
        } => ref_predict(if row[*feature] < *threshold { left } else { right }, row),
    }
}

/// Level-order numbering, children appended left then right.
fn ref_flatten(root: &RefNode) -> Vec<(Option<(usize, f64, usize)>, f64)> {
    let mut order: Vec<&RefNode> = vec![root];
    let mut out = Vec::new();
    let mut i = 0;
    while i < order.len() {
        match order[i] {
            RefNode::Leaf(w) => out.push((None, *w)),
            RefNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let l = order.len();
                out.push((Some((*feature, *threshold, l)), 0.0));
                order.push(left);
                order.push(right);
            }
        }
        i += 1;
    }
    out
}

fn crit2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut compared = 0;
    for inst in 0..50 {
        let p = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..20).map(|_| (0..p).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 + r[p - 1].sin() * 3.0 + rng.random_range(-1.0..1.0)).collect();
        let names: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows: Vec<Vec<Cell<f64>>> = x.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        let m = FeatureMatrix::from_rows(&names, &rows).unwrap();
        let params = HyperParams {
            max_depth: 3,
            learning_rate: 0.3,
            min_child_weight: 0.0,
            gamma: 0.0,
            reg_lambda: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            n_rounds: 5,
            ..HyperParams::default()
        };
        let model = train(&m, &y, &TrainOptions::new(LossKind::SquaredError, params)).unwrap();

        let base = y.iter().sum::<f64>() / y.len() as f64;
        let mut pred = vec![base; y.len()];
        let all: Vec<usize> = (0..y.len()).collect();
        for (round, tree) in model.trees().iter().enumerate() {
            let g: Vec<f64> = pred.iter().zip(&y).map(|(p, y)| p - y).collect();
            let reference = ref_grow(&x, &g, &all, 0, 3);
            let flat = ref_flatten(&reference);
            if flat.len() != tree.nodes().len() {
                return Err(format!("instance {inst} round {round}: {} reference nodes vs {}", flat.len(), tree.nodes().len()));
            }
            for (k, ((split, w), node)) in flat.iter().zip(tree.nodes()).enumerate() {
                let same = match (split, node) {
                    (None, TreeNode::Leaf { weight }) => (w - weight).abs() <= 1e-12 * w.abs().max(1.0),
                    (Some((f, t, l)), TreeNode::Split { feature, threshold, left, right, .. }) => {
                        f == feature && t == threshold && l == left && l + 1 == *right
                    }
                    _ => false,
                };
                if !same {
                    return Err(format!("instance {inst} round {round} node {k}: reference {split:?}/{w} vs {node:?}"));
                }
            }
            for (r, row) in x.iter().enumerate() {
                pred[r] += 0.3 * ref_predict(&reference, row);
            }
            compared += 1;
        }
    }
    check(true, format!("50 instances, {compared} trees node-for-node equal to the reference"))
}

// ---------------------------------------------------------------- 3

fn crit3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for kind in [LossKind::SquaredError, LossKind::Logistic, LossKind::Absolute, LossKind::Mape] {
        let spec = LossSpec::new(kind);
        for _ in 0..1000 {
            let y: f64 = rng.random_range(5.0..=719.0);
            let yhat: f64 = if kind == LossKind::Logistic {
                rng.random_range(-5.0..=5.0)
            } else {
                let off: f64 = rng.random_range(0.5..300.0);
                if rng.random_bool(0.5) { y + off } else { (y - off).max(y - 4.5) }
            };
            let (g, h) = loss_derivatives(&spec, &[y], &[yhat]).unwrap();
            let step = 1e-4 * yhat.abs().max(1.0);
            let fd = (spec.value(y, yhat + step) - spec.value(y, yhat - step)) / (2.0 * step);
            let rel = (g[0] - fd).abs() / g[0].abs().max(fd.abs());
            worst = worst.max(rel);
            if rel > 1e-6 {
                return Err(format!("{kind:?}: y={y} ŷ={yhat} g={} fd={fd} rel {rel:e}", g[0]));
            }
            if matches!(kind, LossKind::SquaredError | LossKind::Logistic) {
                let (gp, _) = loss_derivatives(&spec, &[y], &[yhat + step]).unwrap();
                let (gm, _) = loss_derivatives(&spec, &[y], &[yhat - step]).unwrap();
                let fdh = (gp[0] - gm[0]) / (2.0 * step);
                let relh = (h[0] - fdh).abs() / h[0].abs().max(fdh.abs());
                if relh > 1e-6 && (h[0] - fdh).abs() > 1e-9 {
                    return Err(format!("{kind:?} curvature: y={y} ŷ={yhat} h={} fd={fdh}", h[0]));
                }
            }
        }
    }
    check(true, format!("4 losses x 1000 pairs, worst relative gradient error {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn crit4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000 {
        let n = rng.random_range(1..60);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let c = confusion(&t, &p).unwrap();
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for i in 0..n {
            match (t[i] == 1.0, p[i] == 1.0) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
            }
        }
        if (c.tp, c.tn, c.fp, c.fn_) != (tp, tn, fp, fn_) {
            return Err(format!("trial {trial}: counts {c:?}"));
        }
        let s = classification_scores::<f64>(&c).unwrap();
        let acc = (tp + tn) as f64 / n as f64;
        if (s.accuracy - acc).abs() > 1e-12 {
            return Err(format!("trial {trial}: accuracy {} vs {acc}", s.accuracy));
        }

        let y: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..719.0)).collect();
        let yh: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..800.0)).collect();
        let mut naive_mape = 0.0;
        for i in 0..n {
            naive_mape += ((y[i] - yh[i]) / y[i]).abs();
        }
        naive_mape *= 100.0 / n as f64;
        let got = mape(&y, &yh).unwrap();
        if (got - naive_mape).abs() > 1e-12 * naive_mape.max(1.0) {
            return Err(format!("trial {trial}: mape {got} vs {naive_mape}"));
        }
        if n >= 2 {
            let mean = y.iter().sum::<f64>() / n as f64;
            let ss_res: f64 = (0..n).map(|i| (y[i] - yh[i]).powi(2)).sum();
            let ss_tot: f64 = (0..n).map(|i| (y[i] - mean).powi(2)).sum();
            let naive_r2 = 1.0 - ss_res / ss_tot;
            let got = r2(&y, &yh).unwrap();
            if (got - naive_r2).abs() > 1e-12 * naive_r2.abs().max(1.0) {
                return Err(format!("trial {trial}: r2 {got} vs {naive_r2}"));
            }
        }
    }
    let worked = classification_scores::<f64>(&ConfusionCounts { tp: 2, tn: 6, fp: 1, fn_: 1 }).unwrap();
    let third = 2.0 / 3.0;
    let ok = (worked.accuracy - 0.8).abs() < 1e-15
        && [worked.precision, worked.recall, worked.f1].iter().all(|v| (v - third).abs() < 1e-15);
    check(
        ok,
        format!(
            "1000 random vectors agree; worked example A={} P={} R={} F1={}",
            worked.accuracy, worked.precision, worked.recall, worked.f1
        ),
    )
}

// ---------------------------------------------------------------- 5

/// A random model with pairwise interactions over `used` features and a
/// symmetric pair (0, 1).
fn random_model(rng: &mut ChaCha8Rng, n: usize, used: &[bool]) -> impl Fn(&[Cell<f64>]) -> f64 + Sync + Clone {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let sym = rng.random_range(-1.0..1.0);
    let used = used.to_vec();
    move |row: &[Cell<f64>]| {
        let v = |j: usize| row[j].unwrap_or(0.0);
        let mut s = sym * (v(0) + v(1)) + (v(0) * v(1)).tanh();
        for i in 2..n {
            if !used[i] {
                continue;
            }
            s += a[i] * v(i);
            for j in (i + 1)..n {
                if used[j] {
                    s += b[i][j] * v(i) * v(j);
                }
            }
            s += (v(i) * a[i]).max(v(0) + v(1));
        }
        s
    }
}

fn crit5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let n = rng.random_range(3..=10);
        let mut used: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let null = rng.random_range(2..n);
        used[null] = false;
        let f = random_model(&mut rng, n, &used);
        let g = random_model(&mut rng, n, &used);
        let mut instance: Vec<Cell<f64>> = (0..n).map(|_| Some(rng.random_range(-2.0..2.0))).collect();
        instance[1] = instance[0];
        let background: Vec<Vec<Cell<f64>>> = (0..6)
            .map(|_| {
                let mut r: Vec<Cell<f64>> = (0..n).map(|_| Some(rng.random_range(-2.0..2.0))).collect();
                r[1] = r[0];
                r
            })
            .collect();
        let pf = FnPredictor(f.clone());
        let pg = FnPredictor(g.clone());
        let (f2, g2) = (f.clone(), g.clone());
        let psum = FnPredictor(move |r: &[Cell<f64>]| f2(r) + g2(r));
        let rf = exact_shapley(&ValueFunction::new(&pf, &background, &instance).unwrap()).unwrap();
        let rg = exact_shapley(&ValueFunction::new(&pg, &background, &instance).unwrap()).unwrap();
        let rs = exact_shapley(&ValueFunction::new(&psum, &background, &instance).unwrap()).unwrap();

        let total: f64 = rf.phi.iter().sum();
        let direct = pf.predict_row(&instance);
        if (rf.base_value + total - direct).abs() > 1e-9 {
            return Err(format!("trial {trial}: efficiency gap {}", rf.base_value + total - direct));
        }
        if rf.phi[null] != 0.0 {
            return Err(format!("trial {trial}: null player {null} got {}", rf.phi[null]));
        }
        if (rf.phi[0] - rf.phi[1]).abs() > 1e-12 * rf.phi[0].abs().max(1.0) {
            return Err(format!("trial {trial}: symmetric pair {} vs {}", rf.phi[0], rf.phi[1]));
        }
        for j in 0..n {
            if (rs.phi[j] - rf.phi[j] - rg.phi[j]).abs() > 1e-9 {
                return Err(format!("trial {trial}: linearity fails on feature {j}"));
            }
        }
        if n <= 6 {
            let mut perms = Vec::new();
            permutations(&mut (0..n).collect(), 0, &mut perms);
            let vf = ValueFunction::new(&pf, &background, &instance).unwrap();
            let mc = mc_shapley_with_permutations(&vf, &perms).unwrap();
            for j in 0..n {
                if (mc.phi[j] - rf.phi[j]).abs() > 1e-12 * rf.phi[j].abs().max(1.0) {
                    return Err(format!("trial {trial}: all-permutation estimate {} vs exact {}", mc.phi[j], rf.phi[j]));
                }
            }
        }
    }

    // Monte Carlo on an 8-feature booster.
    let x: Vec<Vec<Cell<f64>>> = (0..200).map(|_| (0..8).map(|_| Some(rng.random_range(-1.0..1.0))).collect()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| {
            let v = |j: usize| r[j].unwrap();
            3.0 * v(0) + 2.0 * v(1) * v(2) - v(3).abs() + 0.5 * v(4) + rng.random_range(-0.1..0.1)
        })
        .collect();
    let names: Vec<String> = (0..8).map(|j| format!("f{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let m = FeatureMatrix::from_rows(&names, &x).unwrap();
    let params = HyperParams {
        max_depth: 4,
        n_rounds: 50,
        ..HyperParams::default()
    };
    let model = train(&m, &y, &TrainOptions::new(LossKind::SquaredError, params)).unwrap();
    let background = sample_background(&m, 30, 7);
    let mut worst_z: f64 = 0.0;
    for i in [0, 17, 99] {
        let vf = ValueFunction::new(&model, &background, m.row(i)).unwrap();
        let exact = exact_shapley(&vf).unwrap();
        let mc = mc_shapley(&vf, 2000, i as u64).unwrap();
        let se = mc.stderr.unwrap();
        for j in 0..8 {
            let diff = (mc.phi[j] - exact.phi[j]).abs();
            if diff > 3.0 * se[j] + 1e-12 {
                return Err(format!("row {i} feature {j}: |mc - exact| = {diff:e} > 3 x {:e}", se[j]));
            }
            if se[j] > 0.0 {
                worst_z = worst_z.max(diff / se[j]);
            }
        }
    }
    check(
        true,
        format!("efficiency, null player, symmetry, linearity on 100 models; MC within {worst_z:.2} standard errors"),
    )
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

// ---------------------------------------------------------------- 6

fn crit6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0;
    for trial in 0..100 {
        let n = if trial == 0 { 574 } else { rng.random_range(20..600) };
        let k = if trial == 0 { 5 } else { rng.random_range(2..=10) };
        let p_pos = rng.random_range(0.2..0.8);
        let labels: Vec<f64> = (0..n).map(|_| rng.random_bool(p_pos) as u8 as f64).collect();
        let positives = labels.iter().filter(|&&v| v == 1.0).count();
        if positives < k || n - positives < k {
            continue;
        }
        let plan = stratified_folds(&labels, k, trial as u64).unwrap();
        let counts: Vec<usize> = (0..k)
            .map(|f| plan.test_rows(f).iter().filter(|&&r| labels[r] == 1.0).count())
            .collect();
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        worst = worst.max(spread);
        if spread > 1 {
            return Err(format!("trial {trial}: positive counts per fold {counts:?}"));
        }
    }

    let rows: Vec<Vec<Cell<f64>>> = (0..60).map(|_| (0..3).map(|_| Some(rng.random_range(0.0..1.0))).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| (r[0].unwrap() + r[1].unwrap() > 1.0) as u8 as f64).collect();
    let m = FeatureMatrix::from_rows(&["a", "b", "c"], &rows).unwrap();
    let spec = LearnerSpec::new(Family::Knn, Task::Classify);
    let config = NestedConfig {
        outer_k: 10,
        inner_k: 5,
        n_iter: 500,
        space: SearchSpace::default_for(Family::Knn),
        metrics: vec![Metric::F1],
        objective: Metric::F1,
        seed: 6,
    };
    let counter = FitCounter::new();
    let report = nested_evaluate(&spec, &m, &y, &config, Some(&counter)).unwrap();
    check(
        counter.get() == 25_000 && report.inner_fits == 25_000,
        format!("max positive spread {worst} over 100 label vectors; 10 x 5 x 500 search made {} inner fits", counter.get()),
    )
}

// ---------------------------------------------------------------- 7

fn crit7() -> Outcome {
    let labels = [44.0, 45.0, 46.0].map(|d| label(d, 45.0));
    check(labels == [1, 1, 0], format!("44, 45, 46 -> {labels:?}"))
}

// ---------------------------------------------------------------- 8, 9

fn crit8() -> Outcome {
    let spec = reference(LearnerSpec::new(Family::Booster, Task::Regress).with_loss(LossKind::Mape));
    let mut wins = 0;
    let mut kept = Vec::new();
    for seed in 0..SEEDS {
        let d = dataset(seed);
        let filtered = filter_outliers(&d.incidents, 5.0);
        kept.push(filtered.len());
        let (tr, te) = split(d.incidents.len(), seed);
        let (train, test) = (pick(&d.incidents, &tr), pick(&d.incidents, &te));
        let before = holdout_mape(&spec, &d, &train, &test, seed);
        let after = holdout_mape(&spec, &d, &filter_outliers(&train, 5.0), &filter_outliers(&test, 5.0), seed);
        wins += (after < before) as usize;
    }
    let ok = kept.iter().all(|&k| k == 547) && wins >= 8;
    check(ok, format!("547 rows kept in every seed: {}; MAPE improved after filtering in {wins}/10 seeds", kept.iter().all(|&k| k == 547)))
}

fn crit9() -> Outcome {
    let spec = reference(LearnerSpec::new(Family::Gbdt, Task::Regress));
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..SEEDS {
        let d = dataset(seed);
        let (tr, te) = split(d.incidents.len(), seed);
        let train = filter_outliers(&pick(&d.incidents, &tr), 5.0);
        let test = filter_outliers(&pick(&d.incidents, &te), 5.0);
        let orig = holdout_mape(&spec, &d, &train, &test, seed);
        let logs = holdout_mape(&spec.clone().with_transform(TargetTransform::Log), &d, &train, &test, seed);
        wins += (logs <= orig) as usize;
        detail.push(format!("{orig:.0}->{logs:.0}"));
    }
    check(wins >= 8, format!("log-space MAPE <= original in {wins}/10 seeds ({})", detail.join(" ")))
}

// ---------------------------------------------------------------- 10

fn crit10() -> Outcome {
    let spec = reference(LearnerSpec::new(Family::Booster, Task::Regress).with_loss(LossKind::Mape));
    let sets = [FeatureSet::Bfs, FeatureSet::Fsa, FeatureSet::Fsc];
    let mut totals = [0.0; 3];
    let mut dv_hits = 0;
    let radii = [250.0, 500.0, 1000.0, 1500.0];
    for seed in 0..SEEDS {
        let d = dataset(seed);
        let store = d.flow_store();
        let short: Vec<IncidentRecord> =
            filter_outliers(&d.incidents, 5.0).into_iter().filter(|r| label(r.duration_min, 45.0) == 1).collect();
        for (i, &fs) in sets.iter().enumerate() {
            let (m, _) =
                build_features::<f64>(&short, &d.sections, &store, &FeatureSetSpec::new(fs), SchemaPolicy::Learn).unwrap();
            let y = m.target().to_vec();
            let mut settings = CvSettings::new(&[Metric::Mape]);
            settings.seed = seed;
            let report = cross_validate(&spec, &m, &y, &kfold(y.len(), 5, seed).unwrap(), &settings, None).unwrap();
            totals[i] += report.test_summary(Metric::Mape).unwrap().mean.unwrap() / SEEDS as f64;
        }
        let nested = NestedConfig {
            outer_k: 5,
            inner_k: 2,
            n_iter: 1,
            space: SearchSpace::point(&BTreeMap::new()),
            metrics: vec![Metric::Mape],
            objective: Metric::Mape,
            seed,
        };
        let rows = dv_sensitivity(&short, &d.sections, &store, &radii, &spec, &nested).unwrap();
        let best = rows.iter().min_by(|a, b| a.mape_mean.total_cmp(&b.mape_mean)).unwrap();
        dv_hits += (best.dv == 500.0) as usize;
    }
    let [bfs, fsa, fsc] = totals;
    let ok = fsa <= fsc && fsc <= bfs && fsc <= 1.05 * fsa && dv_hits >= 8;
    check(
        ok,
        format!("mean MAPE FSA {fsa:.2} <= FSC {fsc:.2} <= BFS {bfs:.2}, FSC/FSA = {:.3}; best dv = 500 m in {dv_hits}/10 seeds", fsc / fsa),
    )
}

// ---------------------------------------------------------------- 11

fn crit11() -> Outcome {
    let spec = reference(LearnerSpec::new(Family::Booster, Task::Regress).with_loss(LossKind::SquaredError))
        .with_transform(TargetTransform::Log);
    let planted = ["affected_lanes", "hour_of_day", "section_speed"];
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..SEEDS {
        let d = dataset(seed);
        let store = d.flow_store();
        let incidents = filter_outliers(&d.incidents, 5.0);
        let (m, _) = build_features::<f64>(
            &incidents,
            &d.sections,
            &store,
            &FeatureSetSpec::new(FeatureSet::Bfs),
            SchemaPolicy::Learn,
        )
        .unwrap();
        let model = fit(&spec, &m, m.target(), &Default::default(), seed).unwrap();
        let background = sample_background(&m, 50, seed);
        let rows: Vec<usize> = (0..m.n_rows()).step_by(5).collect();
        let summary = shap_summary(
            &model,
            &m.select_rows(&rows),
            &background,
            EstimatorConfig::MonteCarlo { permutations: 20 },
            seed,
        )
        .unwrap();
        let top: Vec<&str> = summary.ranked_names().into_iter().take(5).collect();
        if planted.iter().all(|f| top.contains(f)) {
            hits += 1;
        } else {
            misses.push(format!("seed {seed}: {top:?}"));
        }
    }
    check(hits >= 9, format!("planted features in the top five in {hits}/10 seeds {}", misses.join("; ")))
}

// ---------------------------------------------------------------- 12

fn crit12() -> Outcome {
    let mut gain = 0.0;
    let mut f1 = 0.0;
    for seed in 0..SEEDS {
        let d = dataset(seed);
        let store = d.flow_store();
        let incidents = filter_outliers(&d.incidents, 5.0);
        let (tr, te) = split(incidents.len(), seed);
        let (train, test) = (pick(&incidents, &tr), pick(&incidents, &te));
        let defaults = BiLevelConfig::default();
        let config = BiLevelConfig {
            classifier: reference(defaults.classifier.clone()),
            regressor: reference(defaults.regressor.clone()),
            seed,
            ..defaults
        };
        let (model, _) = fit_bilevel::<f64>(&train, &d.sections, &store, &config).unwrap();
        let report = evaluate_bilevel(&model, &test, &d.sections, &store).unwrap();
        let outcomes = predict_bilevel_many(&model, &test, &d.sections, &store).unwrap();

        let short_train: Vec<f64> = train.iter().map(|r| r.duration_min).filter(|&v| label(v, 45.0) == 1).collect();
        let mean = short_train.iter().sum::<f64>() / short_train.len() as f64;
        let (mut truth, mut est) = (Vec::new(), Vec::new());
        for (r, o) in test.iter().zip(&outcomes) {
            if let (1, Some(v)) = (label(r.duration_min, 45.0), o.duration) {
                truth.push(r.duration_min);
                est.push(v);
            }
        }
        let ours = mape(&truth, &est).unwrap();
        let baseline = mape(&truth, &vec![mean; truth.len()]).unwrap();
        let reported = report.conditioned.as_ref().unwrap().mape;
        if (reported - ours).abs() > 1e-9 {
            return Err(format!("seed {seed}: report MAPE {reported} vs recomputed {ours}"));
        }
        gain += (1.0 - ours / baseline) / SEEDS as f64;
        f1 += report.classification.f1 / SEEDS as f64;
    }
    check(
        gain >= 0.25 && f1 >= 0.75,
        format!("MAPE {:.1}% below the mean-duration predictor; classifier F1 {f1:.3}", gain * 100.0),
    )
}

// ---------------------------------------------------------------- 13

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_incident"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn crit13() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let mut outputs: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    for threads in ["1", "4"] {
        let dir = root.join(format!("t{threads}"));
        let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
        let t = ["--threads", threads];
        cli(&[&["generate", "--out", &p("data"), "--seed", "13", "--n-incidents", "150", "--n-sections", "40", "--outlier-count", "5"][..], &t].concat())?;
        cli(&[&["train", "--data", &p("data"), "--out", &p("bundle"), "--outer-k", "2", "--inner-k", "2", "--n-iter", "3", "--seed", "13"][..], &t].concat())?;
        cli(&[&["evaluate", "--data", &p("data"), "--out", &p("eval"), "--outer-k", "2", "--inner-k", "2", "--n-iter", "2", "--feature-sets", "BFS,FSC,FSD", "--dv-sweep", "250,500"][..], &t].concat())?;
        cli(&[&["predict", "--model", &p("bundle"), "--data", &p("data"), "--out", &p("pred/predictions.csv")][..], &t].concat())
            .or_else(|_| {
                std::fs::create_dir_all(dir.join("pred")).unwrap();
                cli(&[&["predict", "--model", &p("bundle"), "--data", &p("data"), "--out", &p("pred/predictions.csv")][..], &t].concat())
            })?;
        cli(&[&["explain", "--model", &p("bundle"), "--data", &p("data"), "--out", &p("explain"), "--max-rows", "15", "--permutations", "10", "--instance", "INC0003"][..], &t].concat())?;
        let mut all = BTreeMap::new();
        for sub in ["data", "bundle", "eval", "pred", "explain"] {
            for (name, bytes) in files(&dir.join(sub)) {
                all.insert(format!("{sub}/{name}"), bytes);
            }
        }
        outputs.push(all);
    }
    let differing: Vec<&String> = outputs[0]
        .iter()
        .filter(|(k, v)| outputs[1].get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    let same_set = outputs[0].keys().eq(outputs[1].keys());
    check(
        differing.is_empty() && same_set,
        format!("{} output files identical with 1 and 4 threads{}", outputs[0].len(), if differing.is_empty() { String::new() } else { format!("; differing: {differing:?}") }),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("split finder matches exhaustive search", crit1),
        ("unregularized booster equals naive GBDT", crit2),
        ("loss gradients match finite differences", crit3),
        ("metric identities", crit4),
        ("Shapley axioms and Monte-Carlo accuracy", crit5),
        ("stratification and fit accounting", crit6),
        ("threshold labels", crit7),
        ("outlier filtering", crit8),
        ("log-space training", crit9),
        ("feature-set ordering and dv sweep", crit10),
        ("importance recovery", crit11),
        ("two-stage benefit", crit12),
        ("CLI determinism across thread counts", crit13),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if filter.as_ref().is_some_and(|w| w != &id) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {id:>2} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance finished in {:.1}s, {failed} failed", start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
