//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits nonzero if any failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use eabfl::attack::{
    benign_local_train, malicious_update, AttackConfig, ClientJob, OptimizerConfig,
};
use eabfl::data::{synth_generate, train_test_split, Dataset, Sample};
use eabfl::fairness::{evaluate, surrogate_from_logits, surrogate_phi, FairnessReport};
use eabfl::fl::aggregate::{
    aggregate_fairfed, aggregate_fedavg, aggregate_krum, aggregate_norm_threshold, aggregate_qffl,
    apply_deltas, ClipMode,
};
use eabfl::fl::experiment::DataSource;
use eabfl::fl::{run_experiment, AggregationRule, ExperimentConfig, RoundLog, Schedule};
use eabfl::harness::run_sweep;
use eabfl::influence::{ntk, ntk_gram};
use eabfl::lrp::lrp_propagate;
use eabfl::nn::{MlpModel, ParamVector};
use eabfl::rec::{attack_bias, mf_train, prob_t, rmse, run_rec_experiment, RecExperimentConfig};
use eabfl::rng::{stream, Purpose, Rng};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_dims(rng: &mut Rng) -> Vec<usize> {
    let mut d = vec![rng.random_range(1..6)];
    for _ in 0..rng.random_range(1..4) {
        d.push(rng.random_range(2..8));
    }
    d.push(1);
    d
}

fn random_net(dims: &[usize], seed: u64) -> MlpModel {
    MlpModel::init(dims, &mut stream(seed, Purpose::ModelInit, &[])).unwrap()
}

fn random_batch(rng: &mut Rng, dim: usize, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let x = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            Sample::new(x, rng.random_range(0..2), (i % 2) as u8)
        })
        .collect()
}

fn central_difference(m: &MlpModel, f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let dims = m.layer_dims().to_vec();
    (0..m.num_params())
        .map(|k| {
            let mut plus = m.flatten();
            let mut minus = m.flatten();
            plus.0[k] += h;
            minus.0[k] -= h;
            let fp = f(&MlpModel::unflatten(&dims, plus).unwrap());
            let fm = f(&MlpModel::unflatten(&dims, minus).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, 1e-8)` over whole vectors.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Smallest `|z|` over hidden pre-activations; finite differences are only
/// meaningful away from ReLU kinks.
fn kink_distance(m: &MlpModel, batch: &[Sample]) -> f64 {
    batch
        .iter()
        .flat_map(|s| {
            let t = m.forward_trace(&s.features).unwrap();
            let hidden = t.pre_activations.len() - 1;
            t.pre_activations.into_iter().take(hidden).flatten()
        })
        .fold(f64::INFINITY, |a, z| a.min(z.abs()))
}

fn gradient_correctness() -> Outcome {
    let mut rng = stream(101, Purpose::Synthetic, &[]);
    let mut worst = [0.0f64; 4];
    let (mut accepted, mut rejected, mut net) = (0, 0, 0);
    while accepted < 50 {
        net += 1;
        let dims = random_dims(&mut rng);
        let mut m = random_net(&dims, net);
        for l in 0..m.num_layers() {
            for q in 0..dims[l + 1] {
                m.set_bias(l, q, rng.random_range(-0.5..0.5));
            }
        }
        let batch = random_batch(&mut rng, dims[0], 6);
        if kink_distance(&m, &batch) < 1e-3 {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let refs: Vec<&Sample> = batch.iter().collect();
        let extra: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();

        let analytic = m.backward(&refs, Some(&extra)).unwrap();
        let numeric = central_difference(&m, |p| {
            let logits: Vec<f64> = batch
                .iter()
                .map(|s| p.forward(&s.features).unwrap())
                .collect();
            p.mean_loss(refs.iter().copied()).unwrap()
                + logits.iter().zip(&extra).map(|(l, e)| l * e).sum::<f64>()
        });
        worst[0] = worst[0].max(rel_err(&analytic.0, &numeric));

        let x = &batch[0].features;
        let analytic = m.per_sample_output_grad(x).unwrap();
        let numeric = central_difference(&m, |p| p.forward(x).unwrap());
        worst[1] = worst[1].max(rel_err(&analytic.0, &numeric));

        // surrogate with respect to the logits
        let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let groups: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
        let s = surrogate_from_logits(&logits, &groups).unwrap();
        let numeric: Vec<f64> = (0..6)
            .map(|k| {
                let (mut p, mut q) = (logits.clone(), logits.clone());
                p[k] += 1e-6;
                q[k] -= 1e-6;
                (surrogate_from_logits(&p, &groups).unwrap().phi
                    - surrogate_from_logits(&q, &groups).unwrap().phi)
                    / 2e-6
            })
            .collect();
        worst[2] = worst[2].max(rel_err(&s.grad, &numeric));

        // surrogate with respect to the parameters, through the chain rule
        let s = surrogate_phi(&m, &refs).unwrap();
        let mut analytic = ParamVector::zeros(m.num_params());
        for (sample, g) in batch.iter().zip(&s.grad) {
            analytic
                .axpy(*g, &m.per_sample_output_grad(&sample.features).unwrap())
                .unwrap();
        }
        let numeric = central_difference(&m, |p| surrogate_phi(p, &refs).unwrap().phi);
        worst[3] = worst[3].max(rel_err(&analytic.0, &numeric));
    }
    outcome(
        worst.iter().all(|&e| e < 1e-4),
        format!(
            "50 nets ({rejected} draws near a ReLU kink skipped); max rel err backward {:.1e}, output grad {:.1e}, surrogate/logits {:.1e}, surrogate/params {:.1e} (tol 1e-4)",
            worst[0], worst[1], worst[2], worst[3],
        ),
    )
}

/// Whether every z-rule denominator `s = sum_p a_p w_qp` of a neuron that
/// receives relevance satisfies `|s| >= 1e-2` and `|s| >= 1e-3 sum_p |a_p w_qp|`.
fn denominators_nonvanishing(m: &MlpModel, x: &[f64]) -> bool {
    let trace = m.forward_trace(x).unwrap();
    let dims = m.layer_dims();
    for l in 0..m.num_layers() {
        let a = &trace.activations[l];
        for q in 0..dims[l + 1] {
            if l + 1 < m.num_layers() && trace.activations[l + 1][q] == 0.0 {
                continue;
            }
            let terms: Vec<f64> = (0..dims[l]).map(|p| a[p] * m.weight(l, q, p)).collect();
            let s: f64 = terms.iter().sum();
            let abs: f64 = terms.iter().map(|t| t.abs()).sum();
            if s.abs() < 1e-2 || s.abs() < 1e-3 * abs {
                return false;
            }
        }
    }
    true
}

fn lrp_conservation() -> Outcome {
    let mut rng = stream(202, Purpose::Synthetic, &[]);
    let (mut exact, mut stab, mut rejected) = (0.0f64, 0.0f64, 0);
    let mut accepted = 0;
    let mut seed = 0;
    while accepted < 100 {
        seed += 1;
        let dims = random_dims(&mut rng);
        let m = random_net(&dims, 1000 + seed);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        if !denominators_nonvanishing(&m, &x) {
            rejected += 1;
            continue;
        }
        accepted += 1;
        for (eps, worst, relative) in [(0.0, &mut exact, false), (1e-6, &mut stab, true)] {
            let r = lrp_propagate(&m, &x, eps).unwrap();
            let out = r.layers.last().unwrap()[0];
            for s in r.layer_sums() {
                let err = (s - out).abs() / if relative { out.abs().max(1e-12) } else { 1.0 };
                *worst = worst.max(err);
            }
        }
    }

    let hand = MlpModel::from_layers(
        &[2, 2, 1],
        &[
            (vec![vec![1.0, 2.0], vec![3.0, 1.0]], vec![0.5, -1.0]),
            (vec![vec![2.0, 1.0]], vec![0.25]),
        ],
    )
    .unwrap();
    let r = lrp_propagate(&hand, &[1.0, 2.0], 0.0).unwrap();
    let f = 15.25;
    let rh = [f * 11.0 / 15.0, f * 4.0 / 15.0];
    let rx = [
        rh[0] / 5.0 + rh[1] * 3.0 / 5.0,
        rh[0] * 4.0 / 5.0 + rh[1] * 2.0 / 5.0,
    ];
    let expected = [rx.to_vec(), rh.to_vec(), vec![f]];
    let hand_err = r
        .layers
        .iter()
        .flatten()
        .zip(expected.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    outcome(
        exact <= 1e-9 && stab <= 1e-3 && hand_err <= 1e-9,
        format!(
            "100 nets ({rejected} near-zero-denominator draws skipped); max abs err eps=0 {exact:.1e} (tol 1e-9), max rel err eps=1e-6 {stab:.1e} (tol 1e-3), 2-2-1 oracle err {hand_err:.1e}"
        ),
    )
}

fn ntk_properties() -> Outcome {
    let mut rng = stream(303, Purpose::Synthetic, &[]);
    let (mut asymmetric, mut min_eig) = (0, f64::INFINITY);
    for b in 0..50 {
        let dims = random_dims(&mut rng);
        let m = random_net(&dims, 2000 + b);
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let g = ntk_gram(&m, &refs, 4).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                if g[i][j].to_bits() != g[j][i].to_bits()
                    || ntk(&m, refs[i], refs[j]).unwrap().to_bits()
                        != ntk(&m, refs[j], refs[i]).unwrap().to_bits()
                {
                    asymmetric += 1;
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_fn(10, 10, |i, j| g[i][j]));
        min_eig = eig.eigenvalues.iter().copied().fold(min_eig, f64::min);
    }
    outcome(
        asymmetric == 0 && min_eig >= -1e-8,
        format!("50 batches of 10; asymmetric entries {asymmetric}; min eigenvalue {min_eig:.2e} (tol -1e-8)"),
    )
}

fn brute_force_krum(deltas: &[ParamVector], f: usize) -> usize {
    let m = deltas.len();
    let k = m - f - 2;
    let mut best = (f64::INFINITY, 0);
    for i in 0..m {
        let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        let mut cheapest = f64::INFINITY;
        for mask in 0u32..(1 << others.len()) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let s: f64 = others
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &j)| {
                    let d = deltas[i].sub(&deltas[j]).unwrap();
                    d.dot(&d).unwrap()
                })
                .sum();
            cheapest = cheapest.min(s);
        }
        if cheapest < best.0 {
            best = (cheapest, i);
        }
    }
    best.1
}

fn random_deltas(rng: &mut Rng, m: usize, dim: usize) -> Vec<ParamVector> {
    (0..m)
        .map(|_| ParamVector((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()))
        .collect()
}

fn krum_oracle() -> Outcome {
    let mut rng = stream(404, Purpose::Synthetic, &[]);
    let mut mismatches = 0;
    for _ in 0..100 {
        let m = rng.random_range(3..=8);
        let f = rng.random_range(0..=m - 3);
        let dim = rng.random_range(1..6);
        let deltas = random_deltas(&mut rng, m, dim);
        let w = aggregate_krum(&deltas, f).unwrap();
        let chosen = w.iter().position(|&v| v == 1.0);
        if chosen != Some(brute_force_krum(&deltas, f)) || w.iter().sum::<f64>() != 1.0 {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("100 instances, m <= 8; mismatches {mismatches}"),
    )
}

fn aggregation_reductions() -> Outcome {
    let mut rng = stream(505, Purpose::Synthetic, &[]);
    let (mut reduction_failures, mut worst_norm, mut worst_linear) = (0, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.random_range(1..9);
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..500)).collect();
        let losses: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..3.0)).collect();
        let eods: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let fedavg = aggregate_fedavg(&sizes).unwrap();
        if aggregate_qffl(&losses, &sizes, 0.0).unwrap() != fedavg
            || aggregate_fairfed(&sizes, &eods, 0.3, 0.0).unwrap() != fedavg
        {
            reduction_failures += 1;
        }
        let deltas = random_deltas(&mut rng, m, 5);
        let (_, clipped_w) =
            aggregate_norm_threshold(&deltas, &sizes, 1.0, ClipMode::Clip).unwrap();
        for w in [
            fedavg.clone(),
            aggregate_qffl(&losses, &sizes, 2.0).unwrap(),
            aggregate_fairfed(&sizes, &eods, 0.3, 4.0).unwrap(),
            clipped_w,
        ] {
            worst_norm = worst_norm.max((w.iter().sum::<f64>() - 1.0).abs());
        }
        let c = rng.random_range(-3.0..3.0);
        let scaled: Vec<ParamVector> = deltas
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.scale(c);
                d
            })
            .collect();
        let (mut a, mut b) = (ParamVector::zeros(5), ParamVector::zeros(5));
        apply_deltas(&mut a, &deltas, &fedavg).unwrap();
        apply_deltas(&mut b, &scaled, &fedavg).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            worst_linear = worst_linear.max((c * x - y).abs());
        }
    }
    outcome(
        reduction_failures == 0 && worst_norm <= 1e-12 && worst_linear <= 1e-12,
        format!(
            "100 instances; non-bit-exact reductions {reduction_failures}; max |sum w - 1| {worst_norm:.1e} (tol 1e-12); max linearity err {worst_linear:.1e}"
        ),
    )
}

fn adult_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/adult/adult.data")
}

fn adult_cfg(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = seed;
    c.dataset.source = DataSource::Adult;
    c.dataset.path = Some(adult_path());
    c.dataset.max_train = Some(15000);
    c.dataset.max_test = Some(5000);
    c.partition.n_clients = 10;
    c.attack.epsilon = 0.2;
    c
}

fn synth_cfg(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = seed;
    c.partition.n_clients = 10;
    c.attack.epsilon = 0.2;
    c
}

fn clean(mut c: ExperimentConfig) -> ExperimentConfig {
    c.attack.epsilon = 0.0;
    c.attack.schedule = Schedule::None;
    c
}

fn logs(c: &ExperimentConfig) -> Vec<RoundLog> {
    run_experiment(c, None).unwrap().logs
}

fn last(c: &ExperimentConfig) -> FairnessReport {
    logs(c).pop().unwrap().report
}

fn adult_attack() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let base = last(&clean(adult_cfg(seed)));
        let att = last(&adult_cfg(seed));
        let d_eod = att.eod - base.eod;
        let ok =
            base.utility >= 0.78 && d_eod >= 0.08 && (att.utility - base.utility).abs() <= 0.05;
        wins += usize::from(ok);
        rows.push(format!(
            "{:.2}/{:+.3}/{:+.3}",
            base.utility,
            d_eod,
            att.utility - base.utility
        ));
    }
    outcome(
        wins >= 8,
        format!(
            "{wins}/10 seeds with clean utility >= 0.78, dEOD >= +0.08, |dUtility| <= 0.05 (need 8); per seed util/dEOD/dUtil {}",
            rows.join(" ")
        ),
    )
}

fn kappa_monotone() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let mut lo = synth_cfg(seed);
        lo.attack.eab_fl.kappa = 0.1;
        let mut hi = synth_cfg(seed);
        hi.attack.eab_fl.kappa = 0.4;
        let (a, b) = (last(&lo).eod, last(&hi).eod);
        wins += usize::from(b > a);
        rows.push(format!("{a:.3}->{b:.3}"));
    }
    outcome(
        wins >= 8,
        format!(
            "{wins}/10 seeds with EOD(kappa=0.4) > EOD(kappa=0.1) (need 8); {}",
            rows.join(" ")
        ),
    )
}

fn persistence() -> Outcome {
    const SHOT: usize = 15;
    let mut wins = 0;
    let mut runs = Vec::new();
    for seed in 0..SEEDS {
        let mut att = synth_cfg(seed);
        att.rounds = 50;
        att.attack.schedule = Schedule::SingleShot(SHOT);
        let base = clean(att.clone());
        let (a, b) = (logs(&att), logs(&base));
        let run = a[SHOT..]
            .iter()
            .zip(&b[SHOT..])
            .take_while(|(x, y)| x.report.eod > y.report.eod)
            .count();
        wins += usize::from(run >= 20);
        runs.push(run.to_string());
    }
    outcome(
        wins >= 7,
        format!(
            "{wins}/10 seeds with EOD above clean for >= 20 consecutive rounds from round {SHOT} (need 7); run lengths {}",
            runs.join(",")
        ),
    )
}

fn robust_aggregation() -> Outcome {
    let rules = [
        AggregationRule::Krum { f: None },
        AggregationRule::NormThreshold {
            tau_norm: 0.2,
            mode: ClipMode::Clip,
        },
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for rule in rules {
        let mut wins = 0;
        for seed in 0..SEEDS {
            let mut att = synth_cfg(seed);
            att.aggregation = rule.clone();
            let (a, b) = (last(&att), last(&clean(att.clone())));
            wins += usize::from(a.eod > b.eod && (a.utility - b.utility).abs() <= 0.07);
        }
        pass &= wins >= 7;
        parts.push(format!("{} {wins}/10", rule.label()));
    }
    outcome(
        pass,
        format!(
            "attacked EOD > clean with |dUtility| <= 0.07 (need 7 each): {}",
            parts.join(", ")
        ),
    )
}

fn recommender() -> Outcome {
    let cfg = RecExperimentConfig::default();
    let all = cfg.ratings().unwrap();
    let (train, test) = all.split(cfg.test_fraction, cfg.seed).unwrap();
    let model = mf_train(&train, cfg.dim, cfg.epochs, cfg.lr, cfg.seed).unwrap();
    let out = attack_bias(&model, &train, &cfg.attack).unwrap();
    let rated = all.rated_by_user();
    let t = cfg.attack.target_item;
    let d_prob = prob_t(&out.model, &rated, t, cfg.top_k).unwrap().value
        - prob_t(&model, &rated, t, cfg.top_k).unwrap().value;
    let d_rmse = rmse(&out.model, &test).unwrap() - rmse(&model, &test).unwrap();
    let max_b = out
        .model
        .item_bias
        .iter()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    let report = run_rec_experiment(&cfg).unwrap();
    let consistent = report.prob_t_poisoned - report.prob_t_clean == d_prob;
    outcome(
        d_prob >= 0.10 && d_rmse <= 0.2 && max_b <= cfg.attack.c && consistent,
        format!(
            "{} users x {} items; dProb-T {d_prob:+.3} (need >= 0.10), dRMSE {d_rmse:+.4} (need <= 0.2), max|b| {max_b} (c = {})",
            cfg.synthetic.n_users, cfg.synthetic.n_items, cfg.attack.c
        ),
    )
}

fn jsonl_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let mut c = synth_cfg(0);
    c.sweep.kappa_grid = vec![0.1, 0.4];
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, jobs) in dirs.iter().zip([1, 1, 4]) {
        run_sweep(&c, d.path(), Some(jobs), 0).unwrap();
    }
    let runs: Vec<_> = dirs.iter().map(|d| jsonl_bytes(d.path())).collect();
    let ok = runs[0].len() == 2 && runs[0] == runs[1] && runs[0] == runs[2];
    outcome(
        ok,
        format!(
            "kappa sweep cells; rerun identical {}, --jobs 4 identical {}",
            runs[0] == runs[1],
            runs[0] == runs[2]
        ),
    )
}

fn single_client_amplification() -> Outcome {
    let mut wins = 0;
    let opt = OptimizerConfig::default();
    for seed in 0..SEEDS {
        let d = synth_generate(seed, 3000, 0.7, 3.0, 1.0).unwrap();
        let (train, test) = train_test_split(&d, 0.3, seed).unwrap();
        let half: Vec<usize> = (0..train.len() / 2).collect();
        let rest: Vec<usize> = (train.len() / 2..train.len()).collect();
        let (warm, local): (Dataset, Dataset) =
            (train.subset(&half).unwrap(), train.subset(&rest).unwrap());
        let init = random_net(&[d.feature_dim, 32, 16, 1], seed);
        let theta_g = benign_local_train(
            &init,
            &warm,
            3,
            &opt,
            None,
            &mut stream(seed, Purpose::Shuffle, &[]),
        )
        .unwrap()
        .model;
        let job = ClientJob {
            seed,
            round: 0,
            client_id: 0,
            optimizer: &opt,
            surrogate: None,
        };
        let out = malicious_update(&theta_g, &local, &AttackConfig::default(), &job).unwrap();
        wins += usize::from(
            evaluate(&out.model, &test).unwrap().eod
                > evaluate(&out.benign_model, &test).unwrap().eod,
        );
    }
    outcome(
        wins >= 8,
        format!("{wins}/10 seeds with held-out EOD(theta_p) > EOD(theta_b) (need 8)"),
    )
}

fn end_to_end() -> Outcome {
    let mut wins = 0;
    for seed in 0..SEEDS {
        let mut att = synth_cfg(seed);
        att.rounds = 30;
        let (a, b) = (last(&att), last(&clean(att.clone())));
        wins += usize::from(a.eod > b.eod && (a.utility - b.utility).abs() < 0.05);
    }
    outcome(
        wins >= 8,
        format!("synthetic, 10 clients, 30 rounds, eps 0.2 vs 0: {wins}/10 seeds with higher EOD and |dUtility| < 0.05 (need 8)"),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 13] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 lrp conservation", lrp_conservation),
        ("3 ntk properties", ntk_properties),
        ("4 krum oracle", krum_oracle),
        ("5 aggregation reductions", aggregation_reductions),
        ("6 adult attack", adult_attack),
        ("7 kappa monotonicity", kappa_monotone),
        ("8 persistence", persistence),
        ("9 robust aggregation survival", robust_aggregation),
        ("10 recommender attack", recommender),
        ("11 determinism", determinism),
        (
            "single-client bias amplification",
            single_client_amplification,
        ),
        ("end-to-end federated attack", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} [{name}] {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
