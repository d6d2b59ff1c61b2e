//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mgpn::config::{EvalConfig, ModelConfig, TrainConfig};
use mgpn::data::{gen_synthetic, Dataset, SyntheticSpec};
use mgpn::evaluation::{evaluate, param_breakdown, param_count, recall_at, write_dump, Prediction};
use mgpn::model::comparison::{Fusion, Ranker};
use mgpn::model::{Model, ModelInput};
use mgpn::nn::GroupConv2d;
use mgpn::params::{ParamBuilder, ParamStore};
use mgpn::proposal::{
    boundary_map, build_grid, content_map, moment_maps, temporal_iou, CandidateGrid, MomentSpan, Scheme,
};
use mgpn::training::gradcheck::{
    grad_check, tiny_config, tiny_dataset, GRAD_CHECK_ENTRIES, GRAD_CHECK_EPSILON, GRAD_CHECK_TOLERANCE,
};
use mgpn::training::{alignment_loss, epoch_line, scale_iou, scale_labels, PreparedBatch, ScaledLabels, Trainer};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_grid(r: &mut ChaCha8Rng, t: usize) -> CandidateGrid {
    let scheme = if r.random_bool(0.5) { Scheme::Sparse } else { Scheme::Dense };
    build_grid(t, t as f64 * r.random_range(0.5..3.0), scheme).unwrap()
}

fn fill_random(p: &mut ParamStore, r: &mut ChaCha8Rng) {
    for v in p.as_mut_slice() {
        *v = r.random_range(-1.0..1.0);
    }
}

// ---------------------------------------------------------------- oracles

fn naive_group_conv(
    x: &Array2<f64>,
    w: &[f64],
    bias: Option<&[f64]>,
    side: usize,
    (cin, cout, groups, k, pad): (usize, usize, usize, usize, usize),
) -> Array2<f64> {
    let (ipg, opg) = (cin / groups, cout / groups);
    let mut y = Array2::zeros((side * side, cout));
    for oi in 0..side {
        for oj in 0..side {
            for oc in 0..cout {
                let g = oc / opg;
                let mut acc = bias.map_or(0.0, |b| b[oc]);
                for ky in 0..k {
                    for kx in 0..k {
                        let ii = oi as isize + ky as isize - pad as isize;
                        let jj = oj as isize + kx as isize - pad as isize;
                        if ii < 0 || jj < 0 || ii >= side as isize || jj >= side as isize {
                            continue;
                        }
                        let row = ii as usize * side + jj as usize;
                        for ic in 0..ipg {
                            let wv = w[((ky * k + kx) * cout + oc) * ipg + ic];
                            acc += wv * x[[row, g * ipg + ic]];
                        }
                    }
                }
                y[[oi * side + oj, oc]] = acc;
            }
        }
    }
    y
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let mut r = rng(2024);
    for case in 0..100 {
        let t = r.random_range(1..=32);
        let c = r.random_range(1..=16);
        let grid = random_grid(&mut r, t);
        let clips = random(&mut r, t, c);
        let content = content_map(clips.view(), &grid);
        let boundary = boundary_map(clips.view(), &grid);
        for i in 0..t {
            for j in 0..t {
                let row = i * t + j;
                for ch in 0..c {
                    let (want_c, want_b) = if i <= j && grid.is_valid(i, j) {
                        let m = (i..=j).map(|k| clips[[k, ch]]).fold(f64::NEG_INFINITY, f64::max);
                        (m, clips[[i, ch]] + clips[[j, ch]])
                    } else {
                        (0.0, 0.0)
                    };
                    check(
                        content[[row, ch]] == want_c && boundary[[row, ch]] == want_b,
                        format!("map mismatch in case {case} at ({i}, {j}) channel {ch}"),
                    )?;
                }
            }
        }
    }

    let side = 5;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let groups = [1, 2, 4][r.random_range(0..3)];
        let cin = groups * r.random_range(1..=3);
        let cout = groups * r.random_range(1..=3);
        let k = [1, 3, 5][r.random_range(0..3)];
        let pad = (k - 1) / 2;
        let with_bias = r.random_bool(0.5);
        let mut b = ParamBuilder::new(rng(case));
        let conv = GroupConv2d::new(&mut b, "g", cin, cout, groups, k, pad, with_bias);
        let mut p = b.finish();
        fill_random(&mut p, &mut r);
        let x = random(&mut r, side * side, cin);
        let active = vec![true; side * side];
        let got = conv.forward(&p, x.view(), side, &active);
        let want = naive_group_conv(
            &x,
            p.slice(conv.weight),
            conv.bias.map(|id| p.slice(id)),
            side,
            (cin, cout, groups, k, pad),
        );
        worst = worst.max((&got - &want).mapv(f64::abs).fold(0.0, |a: f64, &v| a.max(v)));

        // 1×1 fusion and ranker on a 5×5 grid
        let c = r.random_range(1..=6);
        let grid = random_grid(&mut r, side);
        let mut b = ParamBuilder::new(rng(100 + case));
        let fusion = Fusion::new(&mut b, c);
        let ranker = Ranker::new(&mut b, c);
        let mut p = b.finish();
        fill_random(&mut p, &mut r);
        let aligned = random(&mut r, side * side, 2 * c);
        let maps = moment_maps(random(&mut r, side, c).view(), &grid);
        let (fused, _) = fusion.forward(&p, aligned.view(), &maps, &grid);
        let scores = ranker.forward(&p, fused.view(), &grid);
        for i in 0..side {
            for j in 0..side {
                let row = i * side + j;
                let (want_f, want_s) = if i <= j && grid.is_valid(i, j) {
                    let a = aligned.row(row).to_vec();
                    let mut cat = a.clone();
                    cat.extend(maps.boundary.row(row).iter());
                    cat.extend(maps.content.row(row).iter());
                    let main = affine(p.get("fuse.main.weight").unwrap(), p.get("fuse.main.bias").unwrap(), &cat);
                    let skip = affine(p.get("fuse.skip.weight").unwrap(), p.get("fuse.skip.bias").unwrap(), &a);
                    let f: Vec<f64> = main.iter().zip(&skip).map(|(m, s)| (m + s).max(0.0)).collect();
                    let z = affine(p.get("rank.weight").unwrap(), p.get("rank.bias").unwrap(), &f)[0];
                    (f, 1.0 / (1.0 + (-z).exp()))
                } else {
                    (vec![0.0; c], 0.0)
                };
                for (ch, w) in want_f.iter().enumerate() {
                    worst = worst.max((fused[[row, ch]] - w).abs());
                }
                worst = worst.max((scores.scores[[i, j]] - want_s).abs());
            }
        }
    }
    check(worst <= 1e-10, format!("sliding-window oracle gap {worst:.3e} > 1e-10"))?;
    Ok(format!("100 map instances exact; conv/fusion/ranker max gap {worst:.2e}"))
}

// ---------------------------------------------------------------- gradient

fn gradient_certification() -> Outcome {
    let config = tiny_config();
    let model = Model::new(&config, 0).map_err(|e| e.to_string())?;
    let data = tiny_dataset(&config, 2, 0).map_err(|e| e.to_string())?;
    let samples: Vec<_> = data.samples.iter().collect();
    let batch = PreparedBatch::new(&model.net, &data, &samples).map_err(|e| e.to_string())?;
    let r = grad_check(&model.net, &model.params, &batch, GRAD_CHECK_EPSILON, GRAD_CHECK_ENTRIES, 0)
        .map_err(|e| e.to_string())?;
    let msg = format!(
        "max relative error {:.3e} over {} entries (worst in {})",
        r.max_rel_error, r.checked, r.worst_param
    );
    check(r.max_rel_error <= GRAD_CHECK_TOLERANCE, msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- masks and metrics

fn scaled_oracle(o: f64, lo: f64, hi: f64) -> (f64, u8) {
    if o <= lo {
        (0.0, 0)
    } else if o >= hi {
        (1.0, 2)
    } else {
        ((o - lo) / (hi - lo), 1)
    }
}

fn mask_and_metrics() -> Outcome {
    let mut r = rng(11);

    // invalid blocks carry zero features and zero scores
    let config = ModelConfig {
        t: 8,
        ..tiny_config()
    };
    let model = Model::new(&config, 3).map_err(|e| e.to_string())?;
    let data = tiny_dataset(&config, 3, 3).map_err(|e| e.to_string())?;
    for s in &data.samples {
        let words = data.query_vectors(&s.tokens);
        let map = model
            .predict(&ModelInput {
                clips: s.video.view(),
                words: words.view(),
                len: s.tokens.len(),
            })
            .map_err(|e| e.to_string())?;
        let grid = &model.net.grid;
        for i in 0..config.t {
            for j in 0..config.t {
                if !grid.is_valid(i, j) {
                    check(map.scores[[i, j]] == 0.0, format!("nonzero score at invalid ({i}, {j})"))?;
                }
            }
        }
        let maps = moment_maps(random(&mut r, config.t, 4).view(), grid);
        for row in 0..config.t * config.t {
            if !grid.is_valid_row(row) {
                check(
                    maps.content.row(row).iter().chain(maps.boundary.row(row)).all(|&v| v == 0.0),
                    format!("nonzero feature at invalid row {row}"),
                )?;
            }
        }
    }

    // perturbing invalid rows changes neither comparison outputs nor the loss
    let grid = build_grid(16, 32.0, Scheme::Sparse).unwrap();
    let active: Vec<bool> = (0..256).map(|row| grid.is_valid_row(row)).collect();
    let mut b = ParamBuilder::new(rng(5));
    let conv = GroupConv2d::new(&mut b, "g", 8, 8, 4, 7, 3, false);
    let p = b.finish();
    let x = random(&mut r, 256, 8);
    let mut x2 = x.clone();
    let mut p_map = random(&mut r, 16, 16).mapv(|v| 0.5 + 0.4 * v);
    let y = random(&mut r, 16, 16).mapv(|v| 0.5 + 0.5 * v);
    let base_loss = alignment_loss(&p_map, &ScaledLabels { y: y.clone() }, &grid);
    let mut y2 = y.clone();
    for row in 0..256 {
        if !active[row] {
            x2.row_mut(row).fill(1e3);
            p_map[[row / 16, row % 16]] = 1e-3;
            y2[[row / 16, row % 16]] = 1.0;
        }
    }
    let out = conv.forward(&p, x.view(), 16, &active);
    let out2 = conv.forward(&p, x2.view(), 16, &active);
    check(out == out2, "invalid inputs leaked into comparison output")?;
    check(
        alignment_loss(&p_map, &ScaledLabels { y: y2 }, &grid) == base_loss,
        "invalid blocks changed the loss",
    )?;

    // scaled labels, branch by branch
    let mut branches = [[0usize; 3]; 2];
    for (pair, &(lo, hi)) in [(0.5, 1.0), (0.3, 0.7)].iter().enumerate() {
        for k in 0..1000 {
            let o = k as f64 / 999.0;
            let (want, branch) = scaled_oracle(o, lo, hi);
            branches[pair][branch as usize] += 1;
            check(
                (scale_iou(o, lo, hi) - want).abs() <= 1e-15,
                format!("scaled label at IoU {o} for ({lo}, {hi})"),
            )?;
        }
        for _ in 0..20 {
            let g = random_grid(&mut r, 8);
            let s = r.random_range(0.0..g.tau() * 7.0);
            let gt = MomentSpan::new(s, r.random_range(s + 0.01..g.tau() * 8.0)).unwrap();
            let labels = scale_labels(&g, &gt, lo, hi);
            for i in 0..8 {
                for j in 0..8 {
                    let want = if i <= j && g.is_valid(i, j) {
                        let (a, e) = (i as f64 * g.tau(), (j + 1) as f64 * g.tau());
                        let inter = (e.min(gt.end) - a.max(gt.start)).max(0.0);
                        let union = e.max(gt.end) - a.min(gt.start);
                        scaled_oracle(inter / union, lo, hi).0
                    } else {
                        0.0
                    };
                    check(
                        (labels.y[[i, j]] - want).abs() <= 1e-12,
                        format!("grid label ({i}, {j}) for ({lo}, {hi})"),
                    )?;
                }
            }
        }
    }
    check(
        branches.iter().all(|b| b.iter().all(|&n| n > 0)),
        "sweep did not reach every branch",
    )?;

    // recall monotone in n and m
    for _ in 0..200 {
        let samples = r.random_range(1..20);
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..samples {
            let s = r.random_range(0.0..9.0);
            gts.push(MomentSpan::new(s, r.random_range(s + 0.1..10.0)).unwrap());
            let list = (0..r.random_range(0..8))
                .map(|_| {
                    let a = r.random_range(0.0..9.0);
                    Prediction {
                        score: r.random_range(0.0..1.0),
                        span: MomentSpan::new(a, r.random_range(a + 0.1..10.0)).unwrap(),
                    }
                })
                .collect::<Vec<_>>();
            preds.push(list);
        }
        for n in 1..8 {
            for m in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let here = recall_at(&preds, &gts, n, m);
                check(here <= recall_at(&preds, &gts, n + 1, m), "R@n decreased in n")?;
                check(here >= recall_at(&preds, &gts, n, m + 0.05), "R@n increased in m")?;
            }
        }
    }
    // sanity on the IoU used everywhere above
    let a = MomentSpan::new(0.0, 2.0).unwrap();
    check((temporal_iou(&a, &MomentSpan::new(1.0, 3.0).unwrap()) - 1.0 / 3.0).abs() < 1e-15, "iou")?;
    Ok("zero features/scores/loss off-mask; 2×1000 label sweep; recall monotone".into())
}

// ---------------------------------------------------------------- training runs

const LEARN_EPOCHS: usize = 15;
const LEARN_BATCH: usize = 4;

struct Bench {
    train: Dataset,
    test: Dataset,
}

fn bench_model(fine_interaction: bool, comparison: bool) -> ModelConfig {
    ModelConfig {
        t: 16,
        c: 64,
        input_dim: 64,
        word_dim: 300,
        groups: 32,
        fine_interaction,
        comparison,
        ..ModelConfig::default()
    }
}

fn bench() -> Bench {
    let ds = gen_synthetic(&SyntheticSpec {
        num_samples: 250,
        t_v: 16,
        d_v: 64,
        noise_std: 0.1,
        seed: 7,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = bench_model(true, true);
    Bench {
        train: Dataset::from_synthetic(&ds, 0..200, cfg.word_dim, cfg.l_max, 7).unwrap(),
        test: Dataset::from_synthetic(&ds, 200..250, cfg.word_dim, cfg.l_max, 7).unwrap(),
    }
}

/// Trains for the full budget and returns test R@1,IoU=0.7 after the last
/// epoch.
fn train_and_score(bench: &Bench, config: &ModelConfig, seed: u64) -> Result<f64, String> {
    let model = Model::new(config, seed).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        lr: 1e-3,
        batch_size: LEARN_BATCH,
        epochs: LEARN_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tc).map_err(|e| e.to_string())?;
    trainer.fit(&bench.train, |_, _| {}).map_err(|e| e.to_string())?;
    let ev = evaluate(&trainer.model, &bench.test, &EvalConfig::default()).map_err(|e| e.to_string())?;
    Ok(ev.table.get(1, 0.7).unwrap())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn learnability(full: &[f64]) -> Outcome {
    let r = full[0];
    let msg = format!("test R@1,IoU=0.7 = {r:.3} after {LEARN_EPOCHS} epochs (seed 0)");
    check(r >= 0.9, msg.clone())?;
    Ok(msg)
}

fn ablation(full: &[f64], no_fine: &[f64], no_comparison: &[f64]) -> Outcome {
    let (f, nf, nc) = (mean(full), mean(no_fine), mean(no_comparison));
    let msg = format!(
        "mean R@1,IoU=0.7 full {f:.3} {full:?}, no fine+interaction {nf:.3} {no_fine:?}, no comparison {nc:.3} {no_comparison:?}"
    );
    // equal hit counts summed in a different order must still compare equal
    let at_least = |a: f64, b: f64| a + 1e-12 >= b;
    check(at_least(f, nf) && at_least(f, nc), msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- size

fn parameter_count() -> Outcome {
    let config = ModelConfig {
        t: 128,
        c: 256,
        groups: 32,
        comparison_blocks: 4,
        gru_layers: 2,
        ..ModelConfig::default()
    };
    let model = Model::new(&config, 0).map_err(|e| e.to_string())?;
    for (name, n) in param_breakdown(&model.params) {
        println!("    {name:<28} {n:>9}");
    }
    let total = param_count(&model.params);
    let three = param_count(
        &Model::new(
            &ModelConfig {
                gru_layers: 3,
                ..config.clone()
            },
            0,
        )
        .map_err(|e| e.to_string())?
        .params,
    );
    let msg = format!("total {total} (3-layer encoders: {three}); required range [4000000, 10000000]");
    check((4_000_000..=10_000_000).contains(&total), msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- determinism

fn run_pipeline(dir: &std::path::Path) -> Result<(Vec<(String, Vec<u8>)>, String, String, String), String> {
    let spec = SyntheticSpec {
        num_samples: 24,
        t_v: 8,
        d_v: 16,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    ds.write(dir, 8).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();

    let config = ModelConfig {
        t: 8,
        c: 16,
        input_dim: 16,
        groups: 4,
        kernel: 3,
        padding: 1,
        ..ModelConfig::default()
    };
    let train = Dataset::from_synthetic(&ds, 0..16, config.word_dim, config.l_max, 1).map_err(|e| e.to_string())?;
    let test = Dataset::from_synthetic(&ds, 16..24, config.word_dim, config.l_max, 1).map_err(|e| e.to_string())?;
    let model = Model::new(&config, 1).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        batch_size: 4,
        epochs: 3,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tc).map_err(|e| e.to_string())?;
    let mut log = String::new();
    trainer
        .fit(&train, |epoch, loss| {
            log.push_str(&epoch_line(epoch, loss));
            log.push('\n');
        })
        .map_err(|e| e.to_string())?;
    let ev = evaluate(&trainer.model, &test, &EvalConfig::default()).map_err(|e| e.to_string())?;
    Ok((files, log, ev.table.to_text(), write_dump(&ev.samples)))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    check(first.0 == second.0, "synthetic dataset files differ")?;
    check(first.1 == second.1, "loss logs differ")?;
    check(first.2 == second.2 && first.3 == second.3, "metric tables or dumps differ")?;
    Ok(format!("{} data files, loss log, metric table and dump identical", first.0.len()))
}

fn main() -> ExitCode {
    let quick = std::env::args().any(|a| a == "--quick");
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let out = f();
        let secs = t0.elapsed().as_secs_f64();
        match &out {
            Ok(m) => println!("PASS {name}: {m} [{secs:.1}s]"),
            Err(m) => println!("FAIL {name}: {m} [{secs:.1}s]"),
        }
        results.push((name, out, secs));
    };

    run("oracle equivalence", &mut oracle_equivalence);
    run("gradient certification", &mut gradient_certification);
    run("mask and metric correctness", &mut mask_and_metrics);

    if quick {
        println!("SKIP synthetic learnability: --quick");
        println!("SKIP ablation ordering: --quick");
    } else {
        let bench = bench();
        let seeds = [0u64, 1, 2];
        let scores = |fine: bool, comparison: bool| -> Result<Vec<f64>, String> {
            seeds
                .iter()
                .map(|&s| train_and_score(&bench, &bench_model(fine, comparison), s))
                .collect()
        };
        let mut full = Err(String::from("not run"));
        run("synthetic learnability", &mut || {
            full = scores(true, true);
            learnability(full.as_ref().map_err(Clone::clone)?)
        });
        run("ablation ordering", &mut || {
            ablation(
                full.as_ref().map_err(Clone::clone)?,
                &scores(false, true)?,
                &scores(true, false)?,
            )
        });
    }

    run("parameter count", &mut parameter_count);
    run("determinism", &mut determinism);

    let failed: Vec<_> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
