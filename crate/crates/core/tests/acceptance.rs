//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- C4 C9` runs a subset.

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmm::autodiff::{grad_check, Activation, Array, Pattern, Tape, Var};
use tmm::biomarker::feature_ablation_rank;
use tmm::confidence::{confidence_loss, tfcp, ConfidenceNets, PerceptronVars};
use tmm::data::{generate_synthetic, stratified_split, Dataset, SyntheticSpec};
use tmm::fusion::{cross_modal_fuse, cross_view_fuse, final_classifier, modality_classifier, self_attend, AttentionVars, LinearVars};
use tmm::gat::{encode_batch, gat_layer, EncoderConfig, HeadVars};
use tmm::model::{ConfidenceMode, Model, ModelConfig, ModelGraphs, Normalizer, ViewSet};
use tmm::rri::{build_edge_matrix, EdgeMatrix, EdgeSource};
use tmm::train::{cross_validate, evaluate, fit, mean_std, welch_t_test, TrainConfig};

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Epochs of the 5-fold end-to-end run.
const CV_EPOCHS: usize = 80;
/// Epochs of every seed × variant hold-out fit in the comparison studies.
const STUDY_EPOCHS: usize = 60;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

// ---------------------------------------------------------------- C1

type Scalar = fn(&mut Tape, &[Var]) -> tmm::Result<Var>;

/// Projects a tensor onto a fixed pseudo-random direction.
fn weigh(t: &mut Tape, x: Var) -> tmm::Result<Var> {
    let shape = t.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = t.constant(Array::new(&shape, (0..n).map(|i| ((i * 7 % 5) as f64 - 1.7) * 0.3).collect())?);
    let p = t.mul(x, w)?;
    t.sum(p)
}

fn pattern3() -> Arc<Pattern> {
    Arc::new(Pattern::from_mask(&[true, false, true, false, true, true, true, true, true], 3).unwrap())
}

fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, Scalar)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weigh(t, y)
        }),
        ("batch_matmul", vec![vec![2, 3, 4], vec![2, 4, 2]], |t, v| {
            let y = t.batch_matmul(v[0], v[1], false)?;
            weigh(t, y)
        }),
        ("batch_matmul_transposed", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, v| {
            let y = t.batch_matmul(v[0], v[1], true)?;
            weigh(t, y)
        }),
        ("add", vec![vec![3, 2], vec![3, 2]], |t, v| {
            let y = t.add(v[0], v[1])?;
            weigh(t, y)
        }),
        ("sub", vec![vec![3, 2], vec![3, 2]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weigh(t, y)
        }),
        ("mul", vec![vec![3, 2], vec![3, 2]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weigh(t, y)
        }),
        ("add_bias", vec![vec![4, 3], vec![3]], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            weigh(t, y)
        }),
        ("scale_rows", vec![vec![4, 3], vec![4, 1]], |t, v| {
            let y = t.scale_rows(v[0], v[1])?;
            weigh(t, y)
        }),
        ("affine", vec![vec![3, 3]], |t, v| {
            let y = t.affine(v[0], -1.5, 0.25)?;
            weigh(t, y)
        }),
        ("recip", vec![vec![3, 3]], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let pos = t.affine(sq, 1.0, 0.5)?;
            let y = t.recip(pos)?;
            weigh(t, y)
        }),
        ("leaky_relu", vec![vec![4, 3]], |t, v| {
            let y = t.activation(v[0], Activation::GAT_LEAKY)?;
            weigh(t, y)
        }),
        ("elu", vec![vec![4, 3]], |t, v| {
            let y = t.activation(v[0], Activation::Elu)?;
            weigh(t, y)
        }),
        ("sigmoid", vec![vec![4, 3]], |t, v| {
            let y = t.activation(v[0], Activation::Sigmoid)?;
            weigh(t, y)
        }),
        ("clamp", vec![vec![4, 3]], |t, v| {
            let y = t.clamp(v[0], -10.0, 10.0)?;
            weigh(t, y)
        }),
        ("softmax_rows", vec![vec![3, 4]], |t, v| {
            let y = t.softmax(v[0], 1)?;
            weigh(t, y)
        }),
        ("softmax_columns", vec![vec![3, 4]], |t, v| {
            let y = t.softmax(v[0], 0)?;
            weigh(t, y)
        }),
        ("masked_softmax", vec![vec![2, 3, 3]], |t, v| {
            let y = t.masked_softmax(v[0], &[true, true, false, true, true, true, false, true, true])?;
            weigh(t, y)
        }),
        ("outer_add", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let y = t.outer_add(v[0], v[1])?;
            weigh(t, y)
        }),
        ("edge_softmax", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let y = t.edge_softmax(v[0], v[1], &pattern3(), 0.2)?;
            weigh(t, y)
        }),
        ("edge_aggregate", vec![vec![2, 7], vec![2, 3, 2]], |t, v| {
            let y = t.edge_aggregate(v[0], v[1], &pattern3())?;
            weigh(t, y)
        }),
        ("scatter_pattern", vec![vec![2, 7]], |t, v| {
            let y = t.scatter_pattern(v[0], &pattern3())?;
            weigh(t, y)
        }),
        ("concat", vec![vec![2, 3], vec![2, 2]], |t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            weigh(t, y)
        }),
        ("slice", vec![vec![2, 5]], |t, v| {
            let y = t.slice(v[0], 1, 1, 3)?;
            weigh(t, y)
        }),
        ("reshape", vec![vec![2, 6]], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            weigh(t, y)
        }),
        ("mean_axis", vec![vec![2, 3, 2]], |t, v| {
            let y = t.mean_axis(v[0], 1)?;
            weigh(t, y)
        }),
        ("sum", vec![vec![3, 3]], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        }),
        ("mean", vec![vec![3, 3]], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.mean(sq)
        }),
        ("cross_entropy", vec![vec![4, 3]], |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        ("pick_label", vec![vec![4, 3]], |t, v| {
            let p = t.softmax(v[0], 1)?;
            let y = t.pick_label(p, &[0, 2, 1, 2])?;
            weigh(t, y)
        }),
        ("max_excluding_label", vec![vec![4, 3]], |t, v| {
            let p = t.softmax(v[0], 1)?;
            let y = t.max_excluding_label(p, &[0, 2, 1, 2])?;
            weigh(t, y)
        }),
    ]
}

fn random_graph(rng: &mut ChaCha8Rng, d: usize) -> EdgeMatrix {
    let mut adj = vec![false; d * d];
    for i in 0..d {
        for j in 0..i {
            let on = rng.random_bool(0.5);
            adj[i * d + j] = on;
            adj[j * d + i] = on;
        }
    }
    EdgeMatrix::from_adjacency(d, adj, 0.0, EdgeSource::Transcriptomic).unwrap()
}

fn attention_triples(v: &[Var]) -> Vec<AttentionVars> {
    v.chunks(3).map(|c| AttentionVars { q: c[0], k: c[1], v: c[2] }).collect()
}

/// Named relative errors of the layer suite.
fn layer_checks(rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (d, f_in) in [(4, 3), (5, 1), (5, 6)] {
        let e = random_graph(rng, d);
        let mut point = vec![random(rng, &[2, d, f_in])];
        for _ in 0..2 {
            point.push(random(rng, &[f_in, 3]));
            point.push(random(rng, &[6, 1]));
        }
        let err = grad_check(
            |t, v| {
                let heads: Vec<HeadVars> = v[1..].chunks(2).map(|c| HeadVars { w: c[0], a: c[1] }).collect();
                let y = gat_layer(t, v[0], &e, &heads)?;
                weigh(t, y)
            },
            &point,
            GRAD_EPS,
        )
        .unwrap();
        out.push((format!("gat_layer d={d} f_in={f_in}"), err));
    }

    let e = random_graph(rng, 4);
    let mut point = vec![random(rng, &[2, 4, 1])];
    for f_in in [1, 4, 4] {
        for _ in 0..2 {
            point.push(random(rng, &[f_in, 2]));
            point.push(random(rng, &[4, 1]));
        }
    }
    let err = grad_check(
        |t, v| {
            let layers: Vec<Vec<HeadVars>> = v[1..]
                .chunks(4)
                .map(|l| l.chunks(2).map(|c| HeadVars { w: c[0], a: c[1] }).collect())
                .collect();
            let y = encode_batch(t, v[0], &e, &layers)?;
            weigh(t, y)
        },
        &point,
        GRAD_EPS,
    )
    .unwrap();
    out.push(("multi-level encoder".into(), err));

    let mut point = vec![random(rng, &[3, 4]), random(rng, &[3, 4])];
    point.extend((0..6).map(|_| random(rng, &[4, 3])));
    let err = grad_check(
        |t, v| {
            let p = attention_triples(&v[2..]);
            let y = cross_view_fuse(t, v[0], v[1], p[0], p[1])?;
            weigh(t, y)
        },
        &point,
        GRAD_EPS,
    )
    .unwrap();
    out.push(("cross_view_fuse".into(), err));

    let mut point = vec![random(rng, &[3, 4])];
    point.extend((0..3).map(|_| random(rng, &[4, 3])));
    let err = grad_check(
        |t, v| {
            let y = self_attend(t, v[0], attention_triples(&v[1..])[0])?;
            weigh(t, y)
        },
        &point,
        GRAD_EPS,
    )
    .unwrap();
    out.push(("self_attend".into(), err));

    let point = vec![random(rng, &[5, 4]), random(rng, &[4, 2]), random(rng, &[2])];
    let err = grad_check(
        |t, v| {
            let (_, loss) = modality_classifier(t, v[0], LinearVars { w: v[1], b: v[2] }, Some(&[0, 1, 1, 0, 1]))?;
            Ok(loss.expect("labels given"))
        },
        &point,
        GRAD_EPS,
    )
    .unwrap();
    out.push(("modality_classifier".into(), err));

    let mut point = vec![random(rng, &[5, 4]), random(rng, &[4, 3]), random(rng, &[3])];
    for _ in 0..2 {
        point.extend([random(rng, &[4, 3]), random(rng, &[3]), random(rng, &[3, 1]), random(rng, &[1])]);
    }
    let err = grad_check(
        |t, v| {
            let perc = |s: &[Var]| PerceptronVars {
                hidden: LinearVars { w: s[0], b: s[1] },
                out: LinearVars { w: s[2], b: s[3] },
            };
            let nets = ConfidenceNets {
                classifier: LinearVars { w: v[1], b: v[2] },
                tcp: perc(&v[3..7]),
                fcp: perc(&v[7..11]),
            };
            Ok(confidence_loss(t, v[0], &[0, 1, 2, 1, 0], &nets)?.0)
        },
        &point,
        GRAD_EPS,
    )
    .unwrap();
    out.push(("confidence_loss".into(), err));

    let mut point: Vec<Array> = (0..3).map(|_| random(rng, &[3, 4])).collect();
    // one triple per ordered pair, diagonal included but unused
    point.extend((0..27).map(|_| random(rng, &[4, 3])));
    point.extend([random(rng, &[18, 2]), random(rng, &[2])]);
    let err = grad_check(
        |t, v| {
            let u = cross_modal_fuse(t, &v[..3], &attention_triples(&v[3..30]))?;
            let logits = final_classifier(t, u, LinearVars { w: v[30], b: v[31] })?;
            t.cross_entropy(logits, &[1, 0, 1])
        },
        &point,
        GRAD_EPS,
    )
    .unwrap();
    out.push(("cross_modal_fuse + final_classifier".into(), err));
    out
}

/// Toy instance with n = 4, d = 6, M = 2, C = 2.
fn toy_model(rng: &mut ChaCha8Rng, views: ViewSet, confidence: ConfidenceMode) -> (Model, Vec<Array>, Vec<usize>) {
    let (n, d) = (4, 6);
    let labels = vec![0, 1, 0, 1];
    let features: Vec<Array> = (0..2)
        .map(|_| {
            let data = (0..n * d)
                .map(|k| rng.random_range(-1.0..1.0) + if k % d < 2 { labels[k / d] as f64 } else { 0.0 })
                .collect();
            Array::new(&[n, d], data).unwrap()
        })
        .collect();
    let expression = random(rng, &[10, d]);
    let graphs = ModelGraphs {
        transcriptomic: Arc::new(build_edge_matrix(&expression, 0.0, EdgeSource::Transcriptomic).unwrap()),
        radiomic: features
            .iter()
            .enumerate()
            .map(|(m, f)| Arc::new(build_edge_matrix(f, 0.0, EdgeSource::Modality(format!("m{m}"))).unwrap()))
            .collect(),
    };
    let cfg = ModelConfig {
        encoder: EncoderConfig { levels: 3, heads: 2, head_dim: 3 },
        att_dim: 4,
        conf_hidden: 3,
        classes: 2,
        views,
        confidence,
        ..ModelConfig::default()
    };
    let model = Model::new(
        cfg,
        vec!["m0".into(), "m1".into()],
        (0..d).map(|r| format!("r{r}")).collect(),
        features.iter().map(|f| Normalizer::fit(f).unwrap()).collect(),
        graphs,
        rng.random(),
    )
    .unwrap();
    (model, features, labels)
}

fn c1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut results: Vec<(String, f64)> = Vec::new();
    for (name, shapes, f) in primitives() {
        let worst = (0..3)
            .map(|_| {
                let point: Vec<Array> = shapes.iter().map(|s| random(&mut rng, s)).collect();
                grad_check(f, &point, GRAD_EPS).unwrap()
            })
            .fold(0.0, f64::max);
        results.push((format!("primitive {name}"), worst));
    }
    results.extend(layer_checks(&mut rng));
    for confidence in [ConfidenceMode::Tfcp, ConfidenceMode::Tcp, ConfidenceMode::Nn] {
        let (model, features, labels) = toy_model(&mut rng, ViewSet::Both, confidence);
        let err = grad_check(
            |t, vars| {
                let fwd = model.forward_with(t, vars, &features, Some(&labels))?;
                Model::total_loss(t, &fwd, 1.0, 1.0)
            },
            model.params(),
            GRAD_EPS,
        )
        .unwrap();
        results.push((format!("total loss ({confidence})"), err));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let (worst_name, worst) = results
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    for (name, err) in &results {
        if *err >= GRAD_TOL {
            println!("    {name}: {err:.3e}");
        }
    }
    outcome(
        worst < GRAD_TOL && elapsed < 30.0,
        format!(
            "{} checks, max relative error {worst:.2e} ({worst_name}), {elapsed:.1}s",
            results.len()
        ),
    )
}

// ---------------------------------------------------------------- C2

fn oracle_pcc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for k in 0..x.len() {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (rows, d) = (20, 10);
    let mut mismatches = 0;
    let mut non_monotone = 0;
    for _ in 0..100 {
        let x = random(&mut rng, &[rows, d]);
        let col = |j: usize| -> Vec<f64> { (0..rows).map(|i| x.data()[i * d + j]).collect() };
        let lambda: f64 = rng.random_range(-0.6..0.8);
        let built = build_edge_matrix(&x, lambda, EdgeSource::Transcriptomic).unwrap();
        for i in 0..d {
            for j in 0..d {
                let expected = i == j || oracle_pcc(&col(i), &col(j)) >= lambda;
                if built.has_edge(i, j) != expected {
                    mismatches += 1;
                }
            }
        }
        let mut lambdas: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        lambdas.sort_by(f64::total_cmp);
        let graphs: Vec<EdgeMatrix> = lambdas
            .iter()
            .map(|&l| build_edge_matrix(&x, l, EdgeSource::Transcriptomic).unwrap())
            .collect();
        for w in graphs.windows(2) {
            let nested = (0..d).all(|i| (0..d).all(|j| !w[1].has_edge(i, j) || w[0].has_edge(i, j)));
            if !nested {
                non_monotone += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && non_monotone == 0,
        format!("100 matrices 20×10: {mismatches} entry mismatches, {non_monotone} monotonicity violations"),
    )
}

// ---------------------------------------------------------------- C3

fn c3() -> Outcome {
    let examples = [(1.0, 0.0, 1.0), (0.7, 0.3, 0.7), (0.8, 0.1, 2.0 / (1.0 / 0.8 + 1.0 / 0.9))];
    let worst_example = examples
        .iter()
        .map(|&(t, f, want)| (tfcp(t, f) - want).abs())
        .fold(0.0, f64::max);
    let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
    let mut violations = 0;
    for (a, &t) in grid.iter().enumerate() {
        for (b, &f) in grid.iter().enumerate() {
            let v = tfcp(t, f);
            if v > (t + 1.0 - f) / 2.0 + 1e-15 {
                violations += 1;
            }
            if a + 1 < grid.len() && tfcp(grid[a + 1], f) < v {
                violations += 1;
            }
            if b + 1 < grid.len() && tfcp(t, grid[b + 1]) > v {
                violations += 1;
            }
        }
    }
    outcome(
        worst_example < 1e-6 && violations == 0,
        format!("examples max error {worst_example:.1e}; {violations} invariant violations on the 100×100 grid"),
    )
}

// ---------------------------------------------------------------- C4

fn c4() -> Outcome {
    let start = Instant::now();
    let (ds, _) = generate_synthetic(&SyntheticSpec::default(), 0).unwrap();
    let train = TrainConfig { epochs: CV_EPOCHS, seed: 0, ..TrainConfig::default() };
    let report = cross_validate(&ds, 5, &ModelConfig::default(), &train, "synthetic").unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let [acc, _, auc] = report.summary();
    println!("    per-fold ACC {:?}", report.acc());
    outcome(
        acc.0 >= 0.90 && auc.0 >= 0.95 && elapsed < 300.0,
        format!(
            "5-fold, {CV_EPOCHS} epochs: ACC {:.4} ± {:.4}, AUC {:.4} ± {:.4}, {elapsed:.0}s",
            acc.0, acc.1, auc.0, auc.1
        ),
    )
}

// ---------------------------------------------------------------- C5-C8

/// Hold-out accuracies of every variant over the seeds.
struct Study {
    tfcp: Vec<f64>,
    tcp: Vec<f64>,
    nn: Vec<f64>,
    t_only: Vec<f64>,
    r_only: Vec<f64>,
    neither: Vec<f64>,
    /// (kept modality indices, accuracies); the full set is `tfcp`.
    subsets: Vec<(Vec<usize>, Vec<f64>)>,
    /// Planted ROIs of the strongest modality in its top 8, per seed.
    recovered: Vec<usize>,
    strongest: String,
}

fn holdout(ds: &Dataset, seed: u64, cfg: &ModelConfig) -> (Model, Vec<usize>, f64) {
    let split = stratified_split(&ds.labels, 5, seed).unwrap();
    let test = split.test(0).to_vec();
    let train = TrainConfig { epochs: STUDY_EPOCHS, seed, ..TrainConfig::default() };
    let (model, _) = fit(ds, &split.train(0), cfg, &train).unwrap();
    let acc = evaluate(&model, &ds.features(&test), &ds.labels_of(&test)).unwrap().acc;
    (model, test, acc)
}

fn run_study() -> Study {
    let start = Instant::now();
    let spec = SyntheticSpec::default();
    let strongest_idx = (0..spec.modalities)
        .max_by(|&a, &b| {
            let s = |m: usize| spec.modality_scale.get(m).copied().unwrap_or(1.0);
            s(a).total_cmp(&s(b)).then(b.cmp(&a))
        })
        .unwrap();
    let strongest = spec.modality_names()[strongest_idx].clone();
    let subsets: Vec<Vec<usize>> = vec![vec![0, 1], vec![0, 2], vec![1, 2], vec![0], vec![1], vec![2]];
    let mut study = Study {
        tfcp: vec![],
        tcp: vec![],
        nn: vec![],
        t_only: vec![],
        r_only: vec![],
        neither: vec![],
        subsets: subsets.iter().map(|s| (s.clone(), vec![])).collect(),
        recovered: vec![],
        strongest: strongest.clone(),
    };
    for &seed in &SEEDS {
        let (ds, truth) = generate_synthetic(&spec, seed).unwrap();
        let base = ModelConfig::default();
        let (full, test, acc) = holdout(&ds, seed, &base);
        study.tfcp.push(acc);
        let ranking = feature_ablation_rank(&full, &ds.features(&test), &ds.labels_of(&test)).unwrap();
        let planted: BTreeSet<usize> = truth.informative[strongest_idx].iter().copied().collect();
        let hits = ranking
            .top_in_modality(&strongest, 8)
            .iter()
            .filter(|e| planted.contains(&e.roi_index))
            .count();
        study.recovered.push(hits);
        let variant = |views, confidence| holdout(&ds, seed, &ModelConfig { views, confidence, ..base.clone() }).2;
        study.tcp.push(variant(ViewSet::Both, ConfidenceMode::Tcp));
        study.nn.push(variant(ViewSet::Both, ConfidenceMode::Nn));
        study.t_only.push(variant(ViewSet::TranscriptomicOnly, ConfidenceMode::Tfcp));
        study.r_only.push(variant(ViewSet::RadiomicOnly, ConfidenceMode::Tfcp));
        study.neither.push(variant(ViewSet::Neither, ConfidenceMode::Tfcp));
        for (keep, accs) in &mut study.subsets {
            let sub = ds.with_modalities(keep).unwrap();
            accs.push(holdout(&sub, seed, &base).2);
        }
        println!("    seed {seed} done ({:.0}s)", start.elapsed().as_secs_f64());
    }
    study
}

fn mean(x: &[f64]) -> f64 {
    mean_std(x).0
}

fn describe(name: &str, x: &[f64]) -> String {
    let (m, s) = mean_std(x);
    let each: Vec<String> = x.iter().map(|v| format!("{v:.4}")).collect();
    format!("    {name:<14} ACC {m:.4} ± {s:.4}  [{}]", each.join(" "))
}

fn p_value(a: &[f64], b: &[f64]) -> String {
    welch_t_test(a, b).map_or_else(|e| format!("NA ({e})"), |p| format!("{p:.3}"))
}

fn c5(s: &Study) -> Outcome {
    for (n, x) in [("TFCP", &s.tfcp), ("TCP", &s.tcp), ("NN", &s.nn)] {
        println!("{}", describe(n, x));
    }
    let (a, b, c) = (mean(&s.tfcp), mean(&s.tcp), mean(&s.nn));
    outcome(
        a >= b && b >= c,
        format!(
            "TFCP {a:.4} ≥ TCP {b:.4} ≥ NN {c:.4}; Welch p TFCP/TCP {} TCP/NN {} TFCP/NN {}",
            p_value(&s.tfcp, &s.tcp),
            p_value(&s.tcp, &s.nn),
            p_value(&s.tfcp, &s.nn)
        ),
    )
}

fn c6(s: &Study) -> Outcome {
    for (n, x) in [("T+R-RRI", &s.tfcp), ("T-RRI only", &s.t_only), ("R-RRI only", &s.r_only), ("neither", &s.neither)] {
        println!("{}", describe(n, x));
    }
    let (both, t, r, none) = (mean(&s.tfcp), mean(&s.t_only), mean(&s.r_only), mean(&s.neither));
    outcome(
        both >= t && both >= r && t >= none && r >= none,
        format!(
            "both {both:.4}, T-only {t:.4}, R-only {r:.4}, neither {none:.4}; Welch p both/T {} both/R {}",
            p_value(&s.tfcp, &s.t_only),
            p_value(&s.tfcp, &s.r_only)
        ),
    )
}

fn c7(s: &Study) -> Outcome {
    let names = SyntheticSpec::default().modality_names();
    let label = |keep: &[usize]| keep.iter().map(|&m| names[m].as_str()).collect::<Vec<_>>().join("+");
    println!("{}", describe(&label(&[0, 1, 2]), &s.tfcp));
    for (keep, accs) in &s.subsets {
        println!("{}", describe(&label(keep), accs));
    }
    let all = mean(&s.tfcp);
    let pairs: Vec<f64> = s.subsets.iter().filter(|(k, _)| k.len() == 2).map(|(_, a)| mean(a)).collect();
    let singles: Vec<f64> = s.subsets.iter().filter(|(k, _)| k.len() == 1).map(|(_, a)| mean(a)).collect();
    let best_pair = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst_pair = pairs.iter().copied().fold(f64::INFINITY, f64::min);
    let best_single = singles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        all >= best_pair && worst_pair >= best_single,
        format!("all three {all:.4}; pairs {worst_pair:.4}..{best_pair:.4}; best single {best_single:.4}"),
    )
}

fn c8(s: &Study) -> Outcome {
    let m = s.recovered.iter().sum::<usize>() as f64 / s.recovered.len() as f64;
    outcome(
        m >= 6.0,
        format!("planted {} ROIs in its top 8 per seed {:?}, mean {m:.1}", s.strongest, s.recovered),
    )
}

// ---------------------------------------------------------------- C9, C10

fn c9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_tmm"))
            .args(["cv", "--epochs", "2", "--seed", "11", "--out"])
            .arg(&out)
            .output()
            .unwrap()
            .status;
        (status.success(), std::fs::read(&out).unwrap_or_default())
    };
    let (ok_a, a) = run("a.csv");
    let (ok_b, b) = run("b.csv");
    outcome(
        ok_a && ok_b && !a.is_empty() && a == b,
        format!("two `cv --seed 11` runs: {} and {} bytes, identical {}", a.len(), b.len(), a == b),
    )
}

fn c10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let start = Instant::now();
    let args = ["tmm", "grid-lambda", "--k", "2", "--epochs", "30", "--seed", "0", "--out"];
    let code = tmm::cli::run(args.iter().map(std::ffi::OsString::from).chain([out.clone().into_os_string()]));
    let elapsed = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    let accs: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(2)?.parse().ok())
        .collect();
    let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        code == 0 && accs.len() == 36 && hi - lo < 0.05,
        format!("{} cells, ACC {lo:.4}..{hi:.4}, spread {:.4}, {elapsed:.0}s", accs.len(), hi - lo),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let selected = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let mut failed = 0;
    let mut record = |id: &str, o: Outcome| {
        println!("{} {id}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    let cheap: [(&str, fn() -> Outcome); 3] = [("C1", c1), ("C2", c2), ("C3", c3)];
    for (id, f) in cheap {
        if selected(id) {
            record(id, f());
        }
    }
    if selected("C4") {
        record("C4", c4());
    }
    if ["C5", "C6", "C7", "C8"].iter().any(|id| selected(id)) {
        let study = run_study();
        let judged: [(&str, fn(&Study) -> Outcome); 4] = [("C5", c5), ("C6", c6), ("C7", c7), ("C8", c8)];
        for (id, f) in judged {
            if selected(id) {
                record(id, f(&study));
            }
        }
    }
    if selected("C9") {
        record("C9", c9());
    }
    if selected("C10") {
        record("C10", c10());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
