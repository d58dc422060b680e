//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
//! criterion fails.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use mg1nn::case_study::case_study;
use mg1nn::dataset::{generate, Dataset, GenerateConfig, Split};
use mg1nn::metrics::{metric1, STANDARD_PERCENTILES};
use mg1nn::mlp::{backward, loss, predict_all, train, MlpModel, TrainConfig, TrainOutcome};
use mg1nn::qbd::{self, QbdSolution};
use mg1nn::random::{open01, seeded, stream};
use mg1nn::sampler::{sample_instance, sample_ph, sample_ph_draw, SamplerConfig};
use mg1nn::simulate::{draw_service_sample, simulate_queue, tv_distance, SimConfig};
use mg1nn::{PhaseType, QueueInstance};

const TRAIN_COUNT: usize = 50_000;
const EVAL_COUNT: usize = 5_000;
const DATA_SEED: u64 = 11;
const TRAIN_SEED: u64 = 42;
const PATIENCE: usize = 25;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, secs: f64, detail: String) {
        if !pass {
            self.failures += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2}: {verdict}  {name} [{detail}; {secs:.1}s]");
    }
}

fn progress(msg: &str) {
    eprintln!("  .. {msg}");
}

fn c1_mm1(r: &mut Report) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for lambda in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let inst = QueueInstance::new(lambda, PhaseType::exponential(1.0).unwrap()).unwrap();
        let dist = QbdSolution::solve(&inst).unwrap().distribution(70).unwrap();
        for (n, p) in dist.probs.iter().enumerate() {
            worst = worst.max((p - (1.0 - lambda) * lambda.powi(n as i32)).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(1, "M/M/1 exactness", worst < 1e-10 && secs < 1.0, secs, format!("max abs error {worst:.2e}"));
}

fn c2_pollaczek_khinchine(r: &mut Report) {
    let t = Instant::now();
    let cfg = SamplerConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let inst = sample_instance(&cfg, &mut seeded(seed)).unwrap();
        let exact = QbdSolution::solve(&inst).unwrap().mean_queue_length();
        let pk = inst.pollaczek_khinchine_mean();
        worst = worst.max((exact - pk).abs() / pk);
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        2,
        "Pollaczek-Khinchine mean",
        worst < 1e-6 && secs < 30.0,
        secs,
        format!("max relative error {worst:.2e} over 100 instances"),
    );
}

fn c3_simulation(r: &mut Report) {
    let t = Instant::now();
    let cfg = SamplerConfig::default();
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for i in 0..20u64 {
        let rho = 0.3 + 0.6 * i as f64 / 19.0;
        let ph = sample_ph(&cfg, &mut stream(3_000, i)).unwrap().scale_to_unit_mean().unwrap();
        let inst = QueueInstance::new(rho, ph).unwrap();
        let exact = QbdSolution::solve(&inst).unwrap().distribution(70).unwrap();
        let sim = simulate_queue(
            &inst,
            &SimConfig {
                seed: 3_100 + i,
                ..SimConfig::default()
            },
        );
        let tv = tv_distance(&exact, &sim);
        if tv > worst {
            worst = tv;
            let m = inst.service().moments(2);
            detail = format!("worst at rho {rho:.3}, cv2 {:.2}", m[1] - 1.0);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        3,
        "QBD vs simulation",
        worst < 0.01 && secs < 300.0,
        secs,
        format!("max TV {worst:.2e} over 20 instances, {detail}"),
    );
}

/// Criterion 4 draws, reused by criterion 5 and 10. Returns the serialized records.
fn c4_c5_sampler(r: &mut Report) -> String {
    let t = Instant::now();
    let cfg = SamplerConfig::default();
    let (mut rejections, mut invalid) = (0usize, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut records = String::new();
    let mut instances = Vec::with_capacity(10_000);
    for i in 0..10_000u64 {
        let mut rng = stream(4_000, i);
        let draw = sample_ph_draw(&cfg, &mut rng).unwrap();
        rejections += draw.rejections;
        let rec = draw.ph.to_record();
        let valid = PhaseType::try_from(rec.clone()).is_ok() && draw.ph.phases() <= cfg.max_ph;
        invalid += usize::from(!valid);
        records.push_str(&serde_json::to_string(&rec).unwrap());
        records.push('\n');
        let unit = draw.ph.scale_to_unit_mean().unwrap();
        let q25 = unit.quantile(0.25);
        lo = lo.min(q25);
        hi = hi.max(q25);
        instances.push((cfg.rho_max * open01(&mut rng), unit));
    }
    let secs = t.elapsed().as_secs_f64();
    let frac = rejections as f64 / (rejections + 10_000) as f64;
    let decades = (hi / lo).log10();
    r.line(
        4,
        "sampler validity and diversity",
        invalid == 0 && frac < 0.20 && decades >= 3.0 && secs < 120.0,
        secs,
        format!(
            "{invalid} invalid, rejection fraction {frac:.4}, 25th percentiles span {lo:.2e}..{hi:.2e} ({decades:.1} decades)"
        ),
    );

    let t = Instant::now();
    let mut heavy = 0usize;
    let mut worst: f64 = 0.0;
    for (lambda, ph) in instances {
        let inst = QueueInstance::new(lambda, ph).unwrap();
        let tail = QbdSolution::solve(&inst).unwrap().distribution(qbd::DEFAULT_LEVELS).unwrap().tail_mass;
        if tail > qbd::DEFAULT_EPSILON {
            heavy += 1;
        }
        worst = worst.max(tail);
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        5,
        "tail mass <= 1e-9 at l=70 for every sampled instance",
        heavy == 0,
        secs,
        format!("{heavy} of 10000 instances exceed 1e-9, largest tail {worst:.3e}; stored datasets redraw these"),
    );
    records
}

fn c6_gradient(r: &mut Report) {
    let t = Instant::now();
    let stats = mg1nn::dataset::FeatureStats {
        mean: vec![0.0; 5],
        std: vec![1.0; 5],
    };
    let model = MlpModel::new(&[5, 12, 12, 10], stats, 606).unwrap();
    let mut rng = seeded(607);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..8)
        .map(|_| {
            let v: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let grads = backward(&model, &xs, &ys).unwrap();

    // Flat coordinate -> (layer, is_bias, index).
    let mut coords = Vec::new();
    for (k, l) in model.layers.iter().enumerate() {
        coords.extend((0..l.weights.len()).map(|i| (k, false, i)));
        coords.extend((0..l.biases.len()).map(|i| (k, true, i)));
    }
    let probes = sample_indices(&mut rng, coords.len(), 200);
    let eval = |m: &MlpModel| loss(&ys, &predict_all(m, &xs).unwrap()).unwrap();
    let mut passed = 0;
    for idx in probes.iter() {
        let (k, bias, i) = coords[idx];
        let analytic = if bias { grads.biases[k][i] } else { grads.weights[k][i] };
        let ok = [1e-6, 2.5e-7, 6.25e-8].iter().any(|&h| {
            let mut plus = model.clone();
            let mut minus = model.clone();
            if bias {
                plus.layers[k].biases[i] += h;
                minus.layers[k].biases[i] -= h;
            } else {
                plus.layers[k].weights[i] += h;
                minus.layers[k].weights[i] -= h;
            }
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            (numeric - analytic).abs() <= 1e-4 * numeric.abs().max(analytic.abs()).max(1e-2)
        });
        passed += usize::from(ok);
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        6,
        "gradient vs central differences",
        passed >= 190 && secs < 10.0,
        secs,
        format!("{passed}/200 probes agree within 1e-4 relative"),
    );
}

fn train_config() -> TrainConfig {
    TrainConfig {
        seed: TRAIN_SEED,
        patience: Some(PATIENCE),
        ..TrainConfig::default()
    }
}

fn gen(count: usize, n: usize, split: Split, workers: usize) -> Dataset {
    let seed = split.derive_seed(DATA_SEED);
    let cfg = GenerateConfig {
        count,
        n_moments: n,
        workers,
        sampler: SamplerConfig {
            seed,
            ..SamplerConfig::default()
        },
        ..GenerateConfig::default()
    };
    generate(&cfg, seed).unwrap()
}

fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    ds.write_to(&mut out).unwrap();
    out
}

fn model_bytes(m: &MlpModel) -> Vec<u8> {
    serde_json::to_vec(&m.to_file_format()).unwrap()
}

struct Trained {
    train8: Dataset,
    n5: TrainOutcome,
}

fn c7_c8_training(r: &mut Report) -> Trained {
    let t = Instant::now();
    progress("generating 50000 training and 5000 validation samples (n=8)");
    let train8 = gen(TRAIN_COUNT, 8, Split::Train, 0);
    let val8 = gen(EVAL_COUNT, 8, Split::Val, 0);
    progress("generating 5000 test samples (n=5)");
    let test5 = gen(EVAL_COUNT, 5, Split::Test, 0);
    let gen_secs = t.elapsed().as_secs_f64();

    let mut sweep = Vec::new();
    let mut n5 = None;
    for n in [2, 5, 8] {
        let t = Instant::now();
        progress(&format!("training with n={n}"));
        let out = train(
            &train8.with_moments(n).unwrap(),
            &val8.with_moments(n).unwrap(),
            &train_config(),
        )
        .unwrap();
        progress(&format!(
            "n={n}: best epoch {} of {}, validation metric1 {:.4e}, {:.0}s",
            out.best_epoch,
            out.log.len(),
            out.best_val_metric1,
            t.elapsed().as_secs_f64()
        ));
        sweep.push((n, out.best_val_metric1));
        if n == 5 {
            let inputs = out.model.feature_stats.apply_all(&test5.features()).unwrap();
            let pred = predict_all(&out.model, &inputs).unwrap();
            let m1 = metric1(&test5.targets(), &pred).unwrap();
            let worst_sum = pred
                .iter()
                .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            let secs = gen_secs + t.elapsed().as_secs_f64();
            r.line(
                7,
                "desk-scale training, test Metric1 <= 0.02",
                m1 <= 0.02 && worst_sum <= 1e-9 && secs < 7200.0,
                secs,
                format!(
                    "test metric1 {m1:.4e}, max |sum-1| {worst_sum:.1e}, best epoch {} of {}",
                    out.best_epoch,
                    out.log.len()
                ),
            );
            n5 = Some(out);
        }
    }
    let (v2, v5, v8) = (sweep[0].1, sweep[1].1, sweep[2].1);
    let gain25 = v2 - v5;
    let gain58 = v5 - v8;
    r.line(
        8,
        "moment-sweep plateau",
        v5 < v2 && gain58 < 0.25 * gain25,
        t.elapsed().as_secs_f64(),
        format!("val metric1 n=2 {v2:.4e}, n=5 {v5:.4e}, n=8 {v8:.4e}; gain 5->8 is {:.1}% of 2->5", 100.0 * gain58 / gain25),
    );
    Trained {
        train8,
        n5: n5.expect("n=5 run"),
    }
}

fn c9_case_study(r: &mut Report, model: &MlpModel) {
    let t = Instant::now();
    let lambda = 0.85;
    let cfg = SamplerConfig::default();
    let index = 0u64;
    let truth = sample_ph(&cfg, &mut stream(9_000, index)).unwrap().scale_to_unit_mean().unwrap();
    let sample = draw_service_sample(&truth, 50_000, &mut seeded(9_100));
    let report = case_study(&sample, lambda, model, Some(&truth)).unwrap();
    let cmp = report.truth.unwrap();
    let m2: Vec<f64> = cmp.metric2.iter().map(|(_, e)| e.unwrap_or(f64::INFINITY)).collect();
    let pass = cmp.metric1 <= 0.01 && m2.iter().all(|e| *e <= 0.05);
    let m2_text: Vec<String> = STANDARD_PERCENTILES
        .iter()
        .zip(&m2)
        .map(|(p, e)| format!("{}%:{e:.3}", p * 100.0))
        .collect();
    r.line(
        9,
        "case study from 50000 service draws",
        pass,
        t.elapsed().as_secs_f64(),
        format!(
            "truth draw {index} ({} phases, exact tail {:.2e}), metric1 {:.4e}, metric2 {}",
            truth.phases(),
            cmp.exact_tail_mass,
            cmp.metric1,
            m2_text.join(" ")
        ),
    );
}

fn c10_determinism(r: &mut Report, records: &str, trained: &Trained) {
    let t = Instant::now();
    let cfg = SamplerConfig::default();
    let mut again = String::new();
    for i in 0..10_000u64 {
        let draw = sample_ph_draw(&cfg, &mut stream(4_000, i)).unwrap();
        again.push_str(&serde_json::to_string(&draw.ph.to_record()).unwrap());
        again.push('\n');
    }
    let draws_same = again == records;

    progress("regenerating the training set on one worker");
    let train8 = gen(TRAIN_COUNT, 8, Split::Train, 1);
    let data_same = dataset_bytes(&train8) == dataset_bytes(&trained.train8);
    progress("retraining the n=5 model");
    let val8 = gen(EVAL_COUNT, 8, Split::Val, 1);
    let out = train(&train8.with_moments(5).unwrap(), &val8.with_moments(5).unwrap(), &train_config()).unwrap();
    let model_same = model_bytes(&out.model) == model_bytes(&trained.n5.model);
    r.line(
        10,
        "byte-identical reruns",
        draws_same && data_same && model_same,
        t.elapsed().as_secs_f64(),
        format!("sampler records {draws_same}, dataset file {data_same}, model file {model_same}"),
    );
}

fn main() {
    let mut r = Report { failures: 0 };
    c1_mm1(&mut r);
    c2_pollaczek_khinchine(&mut r);
    c3_simulation(&mut r);
    let records = c4_c5_sampler(&mut r);
    c6_gradient(&mut r);
    let trained = c7_c8_training(&mut r);
    c9_case_study(&mut r, &trained.n5.model);
    c10_determinism(&mut r, &records, &trained);
    println!("acceptance: {} of 10 criteria failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
