//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N [PASS|FAIL]` line to stderr before asserting.
//!
//! Tests hold a global lock so wall-clock budgets are measured without
//! contention from the training-heavy criteria.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use faultnas_core::controller::Sampling;
use faultnas_core::fault::{apply_mask, mibb_feature_rate, quantize_magnitude, sample_mask, FaultMask, MaskPayload};
use faultnas_core::ftt::{cross_entropy, ft_reward, ftt_loss};
use faultnas_core::harness::dataset::synthetic_blobs;
use faultnas_core::harness::report::{primitive_inspection, sweep};
use faultnas_core::nn::primitive::{build_primitive, primitive_forward};
use faultnas_core::nn::{CellTopology, FaultOptions, ForwardCtx, NodeChoice, PassConfig, QuantConfig};
use faultnas_core::quant::{QuantSpec, Scheme};
use faultnas_core::*;
use num_bigint::BigUint;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{tag}] {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

/// Binomial count `k` of `n` trials lies within `z` standard deviations of `n p`.
fn in_band(k: usize, n: usize, p: f64, z: f64) -> (bool, f64) {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let dev = (k as f64 - mean) / sd;
    (dev.abs() <= z, dev)
}

// ---------------------------------------------------------------- 1

#[test]
fn c01_quantization_exactness() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = RngStream::new(101);
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for _ in 0..100_000 {
        let bits = 1 + rng.below(15) as u32;
        let l = rng.below(33) as i32 - 16;
        let cmos = rng.bernoulli(0.5);
        let scheme = if cmos { Scheme::CmosComplement } else { Scheme::RramSymmetric };
        let spec = QuantSpec::new(bits, l, scheme).unwrap();
        // Independent range: two's complement with `bits` magnitude bits, or
        // the symmetric RRAM code range with one extra magnitude bit.
        let (lo_code, hi_code) =
            if cmos { (-(1i64 << bits), (1i64 << bits) - 1) } else { (-((1i64 << (bits + 1)) - 1), (1i64 << (bits + 1)) - 1) };
        let step = 2f64.powi(-l);
        let (lo, hi) = (lo_code as f64 * step, hi_code as f64 * step);
        let width = hi - lo;
        let x = lo - 0.25 * width + 1.5 * width * rng.uniform();
        let q = spec.quantize_value(x);
        let on_grid = (q / step).fract() == 0.0;
        let in_range = lo <= q && q <= hi;
        let ok = if (lo..=hi).contains(&x) {
            let err = (q - x).abs() / step;
            worst = worst.max(err);
            err <= 0.5
        } else {
            q == x.clamp(lo, hi)
        };
        if !(ok && on_grid && in_range) {
            failures += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = failures == 0 && secs < 5.0;
    verdict(1, "quantization exactness", pass, &format!("{failures} violations in 1e5 triples, max error {worst:.3} step, {secs:.2}s"));
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_fault_rate_soundness() {
    let _g = serial();
    let t = Instant::now();
    let spec = QuantSpec::cmos(8, 4).unwrap();
    let root = RngStream::new(202);
    let mut lines = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, k: usize, n: usize, p: f64| {
        let (ok, dev) = in_band(k, n, p, 5.0);
        pass &= ok && n >= 1_000_000;
        lines.push(format!("{name} {:.3}σ", dev));
    };

    let elems = 125_000;
    let bf = sample_mask(&FaultModelSpec::BitFlip { p: 0.01 }, &[elems], Some(spec), None, &root.derive_str("bf")).unwrap();
    check("bf", bf.fault_count(), elems * 8, 0.01);

    let (c, k, p_m) = (16, 3, 1e-4);
    let rate = mibb_feature_rate(c, k, p_m);
    assert_eq!(rate, (c * k * k) as f64 * p_m);
    let sites = 1_000_000;
    let mibb = sample_mask(&FaultModelSpec::Mibb { p_m }, &[sites], Some(spec), Some(rate), &root.derive_str("mibb")).unwrap();
    check("mibb", mibb.fault_count(), sites, rate);
    // Sign and bit position of the bias are fair draws over the faulty sites.
    let MaskPayload::Mibb(v) = &mibb.payload else { unreachable!() };
    let (sign_ok, sign_dev) = in_band(v.iter().filter(|s| s.2).count(), v.len(), 0.5, 5.0);
    let (top_ok, top_dev) = in_band(v.iter().filter(|s| s.1 == 7).count(), v.len(), 1.0 / 8.0, 5.0);

    let (p0, p1) = (0.067, 0.013);
    let ad = sample_mask(
        &FaultModelSpec::AdsafMultibit { p0, p1 },
        &[sites],
        Some(QuantSpec::rram(7, 4).unwrap()),
        None,
        &root.derive_str("adsaf"),
    )
    .unwrap();
    let (z, o) = ad.stuck_counts().unwrap();
    check("adsaf-saf0", z, sites, p0);
    check("adsaf-saf1", o, sites, p1);

    let one = sample_mask(&FaultModelSpec::Adsaf1bit { p0, p1 }, &[elems], Some(spec), None, &root.derive_str("adsaf1")).unwrap();
    let (z, o) = one.stuck_counts().unwrap();
    check("adsaf1-saf0", z, elems * 8, p0);
    check("adsaf1-saf1", o, elems * 8, p1);

    lines.push(format!("mibb-sign {sign_dev:.3}σ, mibb-top-bit {top_dev:.3}σ"));
    let secs = t.elapsed().as_secs_f64();
    let pass = pass && sign_ok && top_ok && secs < 30.0;
    verdict(2, "fault-rate soundness", pass, &format!("{}; {secs:.2}s", lines.join(", ")));
}

// ---------------------------------------------------------------- 3

fn forced(shape: &[usize], payload: MaskPayload) -> FaultMask {
    FaultMask { shape: shape.to_vec(), seed: 0, stream: 0, payload }
}

#[test]
fn c03_pointwise_semantics() {
    let _g = serial();
    let mut cases = Vec::new();

    // MiBB on a zero feature map with l = 3: bias (-1)^β 2^(α-3).
    let spec = QuantSpec::cmos(8, 3).unwrap();
    let x = Tensor::zeros(&[6]);
    let m = forced(&[6], MaskPayload::Mibb(vec![(1, 0, false), (2, 4, false), (4, 7, true)]));
    let y = apply_mask(&x, &m, Some(spec)).unwrap();
    cases.push(("mibb unit", y.data().to_vec(), vec![0.0, 0.125, 2.0, 0.0, -16.0, 0.0]));

    // MiBB on a non-zero map adds the bias to the existing value.
    let x = Tensor::from_vec(vec![1.5, -0.25]);
    let m = forced(&[2], MaskPayload::Mibb(vec![(0, 2, true), (1, 1, false)]));
    let y = apply_mask(&x, &m, Some(spec)).unwrap();
    cases.push(("mibb offset", y.data().to_vec(), vec![1.0, 0.0]));

    // Multi-bit adSAF on the RRAM grid with 7 bits, l = 4: R^w = 255/16.
    let rram = QuantSpec::rram(7, 4).unwrap();
    let r_w = 255.0 / 16.0;
    let w = Tensor::from_vec(vec![0.5, -0.75, 0.25, -1.0, 0.0]);
    let m = forced(&[5], MaskPayload::StuckAt(vec![(0, false), (1, true), (3, true), (4, true)]));
    let y = apply_mask(&w, &m, Some(rram)).unwrap();
    cases.push(("adsaf multibit", y.data().to_vec(), vec![0.0, -r_w, 0.25, -r_w, 0.0]));

    // One-bit adSAF on 4 magnitude bits: 0.5 -> 8/16, -0.75 -> -12/16.
    let (q, mspec) = quantize_magnitude(&Tensor::from_vec(vec![0.5, -0.75]), 4).unwrap();
    assert_eq!(q.data(), &[0.5, -0.75]);
    let m = forced(&[2], MaskPayload::StuckBits(vec![(0, 0b0001, 0b0001), (1, 0b1000, 0b0000)]));
    let y = apply_mask(&q, &m, Some(mspec)).unwrap();
    cases.push(("adsaf 1-bit", y.data().to_vec(), vec![9.0 / 16.0, -4.0 / 16.0]));

    let bad: Vec<String> =
        cases.iter().filter(|(_, got, want)| got != want).map(|(n, got, want)| format!("{n}: {got:?} != {want:?}")).collect();
    let detail = if bad.is_empty() { format!("{} forced masks exact", cases.len()) } else { bad.join("; ") };
    verdict(3, "pointwise fault semantics", bad.is_empty(), &detail);
}

// ---------------------------------------------------------------- 4

/// Two primitives on a shared input, summed like a cell node, pooled and
/// classified. Returns the loss and, when `grads` is set, the analytic
/// gradients w.r.t. the input and every parameter.
fn node_loss(
    store: &ParamStore,
    kinds: [PrimitiveKind; 2],
    params: &[faultnas_core::nn::primitive::PrimitiveParams; 2],
    x: &Tensor,
    head: &Tensor,
    labels: &[usize],
    stride: usize,
    grads: bool,
) -> (f64, Option<(Tensor, std::collections::BTreeMap<ParamId, Tensor>)>) {
    let mut ctx = ForwardCtx::new(store, QuantConfig::disabled(), FaultOptions::default(), PassConfig::train_clean(), &RngStream::new(0));
    let xv = ctx.tape.leaf(x.clone());
    let a = primitive_forward(&mut ctx, kinds[0], &params[0], xv, stride).unwrap();
    let b = primitive_forward(&mut ctx, kinds[1], &params[1], xv, stride).unwrap();
    let s = ctx.add(a, b).unwrap();
    let p = ctx.global_avg_pool(s).unwrap();
    let h = ctx.tape.leaf(head.clone());
    let logits = ctx.tape.linear(p, h, None).unwrap();
    let loss = ctx.tape.cross_entropy(logits, labels).unwrap();
    let value = ctx.tape.scalar(loss);
    let g = grads.then(|| {
        let g = ctx.tape.backward(loss).unwrap();
        let gx = g.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        (gx, g.params())
    });
    (value, g)
}

#[test]
fn c04_gradient_correctness() {
    use faultnas_core::gradcheck::{finite_difference, rel_error};
    let _g = serial();
    let t = Instant::now();
    let all = PrimitiveKind::ALL;
    let mut covered = std::collections::BTreeSet::new();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for g in 0..20usize {
        let mut rng = RngStream::new(400 + g as u64);
        let kinds = [all[g % 11], all[(3 * g + 5) % 11]];
        covered.extend(kinds);
        let c = 2 + g % 2;
        let stride = 1 + (g / 11) % 2;
        let size = 5 + g % 2;
        let mut store = ParamStore::new();
        let params = [
            build_primitive(&mut store, "a", kinds[0], c, &mut rng).unwrap(),
            build_primitive(&mut store, "b", kinds[1], c, &mut rng).unwrap(),
        ];
        let x = Tensor::randn(&[3, c, size, size], 1.0, &mut rng);
        let head = Tensor::randn(&[3, c], 1.0, &mut rng);
        let labels = [0, 1, 2];
        let (_, analytic) = node_loss(&store, kinds, &params, &x, &head, &labels, stride, true);
        let (gx, gp) = analytic.unwrap();
        let eps = 1e-5;

        let numeric = finite_difference(|p| Ok(node_loss(&store, kinds, &params, p, &head, &labels, stride, false).0), &x, eps).unwrap();
        let mut check = |what: String, an: &[f64], nu: &[f64]| {
            for (i, (&a, &n)) in an.iter().zip(nu).enumerate() {
                let e = rel_error(a, n);
                worst = worst.max(e);
                if e > 1e-3 {
                    failures.push(format!("graph {g} {what}[{i}]: {a} vs {n}"));
                    break;
                }
            }
        };
        check(format!("{kinds:?} input"), gx.data(), &numeric);

        for id in store.ids().collect::<Vec<_>>() {
            let base = store.value(id).clone();
            let an = gp.get(&id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; base.len()]);
            let nu = finite_difference(
                |p| {
                    let mut s = store.clone();
                    s.set(id, p.clone())?;
                    Ok(node_loss(&s, kinds, &params, &x, &head, &labels, stride, false).0)
                },
                &base,
                eps,
            )
            .unwrap();
            check(store.name(id).to_string(), &an, &nu);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = failures.is_empty() && covered.len() == 11 && secs < 120.0;
    let detail = format!("20 graphs, {} primitives, max rel error {worst:.2e}, {secs:.1}s {}", covered.len(), failures.join("; "));
    verdict(4, "gradient correctness", pass, detail.trim_end());
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_search_space_cardinality() {
    let _g = serial();
    let space = SearchSpace::default();
    let got = space.cardinality();
    let per_cell = BigUint::from(11u32).pow(4) * BigUint::from(120u32);
    let want = per_cell.pow(4);
    let approx: f64 = got.to_string().parse().unwrap();
    let pass = space.nodes == 6 && got == want && (approx / 9.5e24 - 1.0).abs() < 0.01;
    verdict(5, "search-space cardinality", pass, &format!("{got} ≈ {approx:.3e}"));
}

// ---------------------------------------------------------------- 6

fn ce_oracle(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let rows = logits.data().chunks(k);
    let total: f64 = rows
        .zip(labels)
        .map(|(r, &y)| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - r[y]
        })
        .sum();
    total / labels.len() as f64
}

#[test]
fn c06_loss_and_reward_exactness() {
    let _g = serial();
    let mut rng = RngStream::new(606);
    let mut worst = 0.0f64;
    let mut endpoints = true;
    for _ in 0..200 {
        let (n, k) = (1 + rng.below(16), 2 + rng.below(9));
        let c = Tensor::randn(&[n, k], 3.0, &mut rng);
        let f = Tensor::randn(&[n, k], 3.0, &mut rng);
        let y: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let (ce_c, ce_f) = (ce_oracle(&c, &y), ce_oracle(&f, &y));
        let a = rng.uniform();
        let got = ftt_loss(&c, Some(&f), &y, a).unwrap();
        let want = (1.0 - a) * ce_c + a * ce_f;
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));

        let lib_c = cross_entropy(&c, &y).unwrap();
        let lib_f = cross_entropy(&f, &y).unwrap();
        endpoints &= ftt_loss(&c, Some(&f), &y, 0.0).unwrap() == lib_c;
        endpoints &= ftt_loss(&c, None, &y, 0.0).unwrap() == lib_c;
        endpoints &= ftt_loss(&c, Some(&f), &y, 1.0).unwrap() == lib_f;
        worst = worst.max((lib_c - ce_c).abs() / ce_c.abs().max(f64::MIN_POSITIVE));

        let (acc_c, acc_f, ar) = (rng.uniform(), rng.uniform(), rng.uniform());
        let r = ft_reward(acc_c, acc_f, ar).unwrap();
        worst = worst.max((r - ((1.0 - ar) * acc_c + ar * acc_f)).abs());
        endpoints &= ft_reward(acc_c, acc_f, 0.0).unwrap() == acc_c;
        endpoints &= ft_reward(acc_c, acc_f, 1.0).unwrap() == acc_f;
    }
    let pass = worst <= 1e-13 && endpoints;
    verdict(6, "loss/reward exactness", pass, &format!("max relative deviation {worst:.1e}, endpoints exact: {endpoints}"));
}

// ---------------------------------------------------------------- 7

/// Probability that the normal cell's first op slot holds `arm`,
/// marginalized exactly over every rollout of a B = 3 space.
fn arm_probability(ctrl: &Controller, arm: PrimitiveKind) -> f64 {
    let prims = &ctrl.space.primitives;
    let mut cells = Vec::new();
    for i0 in 0..2 {
        for i1 in 0..2 {
            for &o0 in prims {
                for &o1 in prims {
                    cells.push(CellTopology { nodes: vec![NodeChoice { inputs: [i0, i1], ops: [o0, o1] }] });
                }
            }
        }
    }
    let mut p = 0.0;
    for n in &cells {
        if n.nodes[0].ops[0] != arm {
            continue;
        }
        for r in &cells {
            let (lp, _) = ctrl.evaluate(&Rollout { normal: n.clone(), reduce: r.clone() }).unwrap();
            p += lp.exp();
        }
    }
    p
}

#[test]
fn c07_controller_bandit() {
    let _g = serial();
    let t = Instant::now();
    let (good, bad) = (PrimitiveKind::SepConv3x3, PrimitiveKind::MaxPool3x3);
    let space = SearchSpace { nodes: 3, primitives: vec![bad, good] };
    let mut probs = Vec::new();
    for seed in 0..5u64 {
        let mut ctrl = Controller::new(ControllerConfig::default(), space.clone(), seed).unwrap();
        let mut rng = RngStream::new(seed).derive_str("bandit");
        for _ in 0..500 {
            let s = ctrl.sample_rollout(&mut rng, Sampling::Stochastic).unwrap();
            let p = if s.rollout.normal.nodes[0].ops[0] == good { 0.8 } else { 0.2 };
            let reward = if rng.bernoulli(p) { 1.0 } else { 0.0 };
            ctrl.reinforce_step(&s.rollout, reward).unwrap();
        }
        probs.push(arm_probability(&ctrl, good));
    }
    let wins = probs.iter().filter(|&&p| p > 0.9).count();
    let secs = t.elapsed().as_secs_f64();
    let shown: Vec<String> = probs.iter().map(|p| format!("{p:.3}")).collect();
    verdict(7, "controller bandit", wins >= 4 && secs < 60.0, &format!("better-arm probability {shown:?}, {wins}/5 > 0.9, {secs:.1}s"));
}

// ---------------------------------------------------------------- 8 / 9

const MIBB_GRID: [f64; 6] = [0.0, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4];
const ADSAF_GRID: [f64; 6] = [0.0, 0.04, 0.06, 0.08, 0.10, 0.12];
const EVAL_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Twin {
    clean: Model,
    ftt: Model,
    test: Dataset,
}

/// Small fixed CNN: width 64, depth 6, downsampling at layers 2 and 4.
fn small_cnn() -> ArchSpec {
    let layers = (0..6).map(|i| (64, if i == 2 || i == 4 { 2 } else { 1 })).collect();
    ArchSpec::SimpleCnn { layers }
}

fn blobs(seed: u64, size: usize) -> (Dataset, Dataset) {
    (
        synthetic_blobs(10, 600, [3, size, size], 1.5, seed, "train").unwrap(),
        synthetic_blobs(10, 300, [3, size, size], 1.5, seed, "test").unwrap(),
    )
}

fn train_twin(spec: &ArchSpec, fault: FaultModelSpec, alpha_l: f64, epochs: usize, seed: u64, size: usize) -> Twin {
    let (train, test) = blobs(seed, size);
    let mut models = [0.0, alpha_l].map(|a| {
        let mut m = Model::build(spec, 3, train.classes, seed).unwrap();
        let cfg = TrainConfig { epochs, alpha_l: a, fault, ..TrainConfig::default() };
        ftt_train(&mut m, &train, &cfg, seed).unwrap();
        Some(m)
    });
    Twin { clean: models[0].take().unwrap(), ftt: models[1].take().unwrap(), test }
}

fn mibb_twins() -> &'static [Twin] {
    static CELL: OnceLock<Vec<Twin>> = OnceLock::new();
    CELL.get_or_init(|| (0..5).map(|s| train_twin(&small_cnn(), FaultModelSpec::Mibb { p_m: 1e-4 }, 0.5, 8, s, 16)).collect())
}

const ADSAF_TRAIN: FaultModelSpec = FaultModelSpec::AdsafMultibit { p0: 0.067, p1: 0.013 };

fn adsaf_twins() -> &'static [Twin] {
    static CELL: OnceLock<Vec<Twin>> = OnceLock::new();
    let spec = ArchSpec::SimpleCnn { layers: vec![(32, 1), (32, 2), (32, 2)] };
    CELL.get_or_init(|| (0..5).map(|s| train_twin(&spec, ADSAF_TRAIN, 0.7, 8, s, 12)).collect())
}

fn faulty_acc(model: &Model, test: &Dataset, fault: &FaultModelSpec) -> f64 {
    sweep(model, "", test, fault, &[fault.rate()], &EVAL_SEEDS, &EvalConfig::default()).unwrap()[0].acc_mean
}

#[test]
fn c08_ftt_benefit() {
    let _g = serial();
    let t = Instant::now();
    let fault = FaultModelSpec::Mibb { p_m: 1e-4 };
    let gaps: Vec<f64> =
        mibb_twins().iter().map(|tw| faulty_acc(&tw.ftt, &tw.test, &fault) - faulty_acc(&tw.clean, &tw.test, &fault)).collect();
    let wins = gaps.iter().filter(|&&g| g >= 0.10).count();
    let secs = t.elapsed().as_secs_f64();
    let shown: Vec<String> = gaps.iter().map(|g| format!("{:+.1}", 100.0 * g)).collect();
    verdict(8, "FTT benefit at p_m=1e-4", wins >= 4 && secs < 3600.0, &format!("gaps (points) {shown:?}, {wins}/5 ≥ 10, {secs:.0}s"));
}

/// Indices where the mean rises above its predecessor by more than one std.
fn monotonicity_breaks(rows: &[ReportRow]) -> Vec<usize> {
    (1..rows.len()).filter(|&i| rows[i].acc_mean > rows[i - 1].acc_mean + rows[i].acc_std.max(rows[i - 1].acc_std)).collect()
}

#[test]
fn c09_degradation_monotonicity() {
    let _g = serial();
    let mut breaks = Vec::new();
    let mut curves = 0;
    let eval = EvalConfig::default();
    let families: [(&str, &[Twin], FaultModelSpec, &[f64]); 2] =
        [("mibb", mibb_twins(), FaultModelSpec::Mibb { p_m: 0.0 }, &MIBB_GRID), ("adsaf", adsaf_twins(), ADSAF_TRAIN, &ADSAF_GRID)];
    for (name, twins, fault, grid) in families {
        for (s, tw) in twins.iter().enumerate() {
            for (regime, m) in [("clean", &tw.clean), ("ftt", &tw.ftt)] {
                let rows = sweep(m, regime, &tw.test, &fault, grid, &EVAL_SEEDS, &eval).unwrap();
                curves += 1;
                for i in monotonicity_breaks(&rows) {
                    breaks.push(format!("{name}/{regime}/seed{s} at {}: {:.3} > {:.3}", grid[i], rows[i].acc_mean, rows[i - 1].acc_mean));
                }
            }
        }
    }
    let detail = format!("{curves} curves, {} breaks {}", breaks.len(), breaks.join("; "));
    verdict(9, "degradation monotonicity", breaks.is_empty(), detail.trim_end());
}

// ---------------------------------------------------------------- 10

#[test]
fn c10_planted_search() {
    let _g = serial();
    let t = Instant::now();
    let planted = PrimitiveKind::SkipConnect;
    let space = SearchSpace { nodes: 3, primitives: vec![planted, PrimitiveKind::ReluConvBn5x5, PrimitiveKind::DilConv5x5] };
    let net_cfg =
        SuperNetConfig { cells: 2, reductions: Some(vec![1]), space: space.clone(), base_channels: 8, ..SuperNetConfig::default() };
    let cfg = SearchConfig { epochs: 10, fault: FaultModelSpec::Mibb { p_m: 2e-3 }, controller_steps: Some(50), ..SearchConfig::default() };
    let mut hits = Vec::new();
    for seed in 0..5u64 {
        let data = synthetic_blobs(4, 600, [3, 8, 8], 0.6, seed, "train").unwrap();
        let mut store = ParamStore::new();
        let mut init = RngStream::new(seed).derive_str("init");
        let net = SuperNet::build(&net_cfg, 3, data.classes, &mut store, &mut init, None).unwrap();
        let mut ctrl = Controller::new(cfg.controller.clone(), space.clone(), seed).unwrap();
        let out = search(&cfg, &net, &mut store, &mut ctrl, &data, seed, None).unwrap();
        let all_planted = out.best.cells().iter().flat_map(|c| &c.nodes).flat_map(|n| n.ops).all(|o| o == planted);
        hits.push((all_planted, out.best.to_string()));
    }
    let wins = hits.iter().filter(|h| h.0).count();
    let secs = t.elapsed().as_secs_f64();
    let shown: Vec<&str> = hits.iter().map(|h| h.1.as_str()).collect();
    verdict(
        10,
        "planted-optimum search",
        wins >= 4 && secs < 7200.0,
        &format!("{wins}/5 argmax rollouts all {planted}: {shown:?}, {secs:.0}s"),
    );
}

// ---------------------------------------------------------------- 11

#[test]
fn c11_transfer() {
    let _g = serial();
    let targets = [FaultModelSpec::Adsaf1bit { p0: 0.067 / 4.0, p1: 0.013 / 4.0 }, FaultModelSpec::BitFlip { p: 0.02 }];
    let mut lines = Vec::new();
    let mut pass = true;
    for target in targets {
        let mut wins = 0;
        let mut shown = Vec::new();
        for tw in adsaf_twins() {
            let clean0 = faulty_acc(&tw.clean, &tw.test, &FaultModelSpec::None);
            let ftt0 = faulty_acc(&tw.ftt, &tw.test, &FaultModelSpec::None);
            let d_clean = clean0 - faulty_acc(&tw.clean, &tw.test, &target);
            let d_ftt = ftt0 - faulty_acc(&tw.ftt, &tw.test, &target);
            wins += usize::from(d_ftt < d_clean);
            shown.push(format!("{:.1}/{:.1}", 100.0 * d_ftt, 100.0 * d_clean));
        }
        pass &= wins >= 4;
        lines.push(format!("{} {wins}/5 (ftt/clean drop {shown:?})", target.name()));
    }
    verdict(11, "transfer from adSAF-multibit training", pass, &lines.join("; "));
}

// ---------------------------------------------------------------- 12

#[test]
fn c12_primitive_inspection() {
    let _g = serial();
    let mut cfg = RunConfig::preset(Profile::Desk);
    // The 4-class preset saturates both stacks at 100%; 10 noisy classes leave headroom.
    cfg.dataset.classes = 10;
    cfg.dataset.noise = 1.5;
    cfg.inspect.primitives = vec![PrimitiveKind::SepConv5x5, PrimitiveKind::DilConv3x3];
    let data = load_dataset(&cfg.dataset).unwrap();
    let rep = primitive_inspection(&cfg, &data).unwrap();
    let acc = |k: PrimitiveKind| rep.ranking.rows.iter().find(|r| r.arch.contains(k.name())).map(|r| r.acc_mean).unwrap();
    let (sep5, dil3) = (acc(PrimitiveKind::SepConv5x5), acc(PrimitiveKind::DilConv3x3));
    let mag = |k: &str| rep.magnitudes.iter().find(|m| m.kind == k).map(|m| m.mean).unwrap();
    let (c3, c1, dw3) = (mag("conv3x3"), mag("conv1x1"), mag("dwconv3x3"));
    let pass = sep5 > dil3 && c3 < c1 && c3 < dw3;
    verdict(
        12,
        "primitive inspection",
        pass,
        &format!("sep5x5 {sep5:.3} vs dil3x3 {dil3:.3}; |w| conv3x3 {c3:.4}, conv1x1 {c1:.4}, dwconv3x3 {dw3:.4}"),
    );
}

// ---------------------------------------------------------------- 13

fn tiny_run(seed: u64) -> (String, String) {
    let mut cfg = RunConfig::preset(Profile::Desk);
    cfg.seed = seed;
    cfg.dataset.train_size = 200;
    cfg.dataset.test_size = 100;
    cfg.dataset.image = [3, 8, 8];
    cfg.train.epochs = 2;
    cfg.train.fault = FaultModelSpec::Mibb { p_m: 3e-4 };
    cfg.train.alpha_l = 0.5;
    let data = load_dataset(&cfg.dataset).unwrap();
    let (model, rows) = faultnas_core::harness::report::train_and_evaluate(
        &cfg.model,
        "ftt",
        &data,
        &cfg.train,
        &cfg.eval,
        &cfg.train.fault,
        &cfg.sweep.seeds,
        cfg.seed,
    )
    .unwrap();
    let mut rows = rows;
    rows.extend(sweep(&model, "ftt", &data.test, &cfg.train.fault, &cfg.sweep.rates, &cfg.sweep.seeds, &cfg.eval).unwrap());
    let report = EvalReport { meta: faultnas_core::harness::report::ReportMeta::new("determinism", Some(&cfg)).unwrap(), rows };

    let net_cfg = SuperNetConfig {
        cells: 2,
        reductions: Some(vec![1]),
        space: SearchSpace { nodes: 3, ..SearchSpace::default() },
        base_channels: 4,
        ..SuperNetConfig::default()
    };
    let scfg = SearchConfig { epochs: 1, fault: FaultModelSpec::Mibb { p_m: 1e-3 }, controller_steps: Some(5), ..SearchConfig::default() };
    let mut store = ParamStore::new();
    let mut init = RngStream::new(seed).derive_str("init");
    let net = SuperNet::build(&net_cfg, 3, data.train.classes, &mut store, &mut init, None).unwrap();
    let mut ctrl = Controller::new(scfg.controller.clone(), net_cfg.space.clone(), seed).unwrap();
    let out = search(&scfg, &net, &mut store, &mut ctrl, &data.train, seed, None).unwrap();
    let search_json = serde_json::to_string(&(&out.history, &out.log, &out.best)).unwrap();
    (serde_json::to_string(&report).unwrap() + &report.to_csv().unwrap(), search_json)
}

#[test]
fn c13_determinism() {
    let _g = serial();
    let a = tiny_run(13);
    let b = tiny_run(13);
    let c = tiny_run(14);
    let pass = a == b && a != c;
    let detail = format!(
        "report {} bytes identical: {}, search log {} bytes identical: {}, other seed differs: {}",
        a.0.len(),
        a.0 == b.0,
        a.1.len(),
        a.1 == b.1,
        a != c
    );
    verdict(13, "determinism", pass, &detail);
}
