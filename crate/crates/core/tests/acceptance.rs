//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fuselm::combine::{CombinationParams, Kind};
use fuselm::eval::{analyze, spearman, ExperimentSpec, ResultRow, Workbench};
use fuselm::fit::nll_loss;
use fuselm::lm::{dump_cache, LanguageModel, LoopbackServer, RemoteLM};
use fuselm::nn::Mode;
use fuselm::synth::{generate, generate_weighted, Genre};

// Gradient correctness
const GRAD_VOCAB: usize = 8;
const GRAD_BATCH: usize = 4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_COORDS_PER_TENSOR: usize = 40;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(10);

// Distribution validity
const VALIDITY_CALLS: usize = 10_000;
const SUM_TOL: f64 = 1e-6;

// Identity suite
const MEAN_TOL: f64 = 1e-12;
const SATURATION_TOL: f64 = 1e-9;
const FIXED_POINT_TOL: f64 = 1e-9;
const SATURATED_RAW: f64 = 40.0;

// Desk-scale replication
const DOMAIN_BYTES: usize = 1_200_000;
const GENERAL_BYTES: usize = 10_000_000;
const DOMAIN_SHARE_IN_GENERAL: f64 = 0.03;
const SEQ_LEN: usize = 64;
const N_FIT: usize = 1000;
const N_TEST: usize = 300;
const FIT_SIZES: [usize; 2] = [100, 1000];
const MEAN_SLACK: f64 = 0.01;
const PIPELINE_TIME_LIMIT: Duration = Duration::from_secs(300);
const GENERALIST_FLOOR: f64 = 0.99;
const CONSTANT_FIT_SIZE_TOL: f64 = 0.01;
const FULL_FIT_SIZE_SLACK: f64 = 0.005;
const RHO_MIN: f64 = 0.2;
const PROTOCOL_TOL: f64 = 1e-6;
const PROTOCOL_SEQUENCES: usize = 20;

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

fn random_dist(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..v).map(|_| rng.gen::<f64>().powi(3) + 1e-4).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn rows(rng: &mut ChaCha8Rng, b: usize, v: usize) -> Array2<f64> {
    let flat: Vec<f64> = (0..b).flat_map(|_| random_dist(rng, v)).collect();
    Array2::from_shape_vec((b, v), flat).unwrap()
}

fn train_loss(params: &mut CombinationParams, ps: &Array2<f64>, pl: &Array2<f64>, targets: &[u32]) -> f64 {
    let (pc, _) = params.combine_train(ps.view(), pl.view()).unwrap();
    nll_loss(pc.view(), targets).unwrap().0
}

/// Largest relative error between analytic and central-difference
/// gradients over a seeded sample of coordinates of every tensor.
fn gradient_check(kind: Kind, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = CombinationParams::init(kind, GRAD_VOCAB, seed);
    if kind.is_constant() {
        for s in params.param_slices_mut() {
            s.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
        }
    }
    params.set_mode(Mode::Train);
    let ps = rows(&mut rng, GRAD_BATCH, GRAD_VOCAB);
    let pl = rows(&mut rng, GRAD_BATCH, GRAD_VOCAB);
    let targets: Vec<u32> = (0..GRAD_BATCH).map(|_| rng.gen_range(0..GRAD_VOCAB as u32)).collect();

    let (pc, cache) = params.combine_train(ps.view(), pl.view()).unwrap();
    let (_, d_pc) = nll_loss(pc.view(), &targets).unwrap();
    let grads = params.backward(&cache, d_pc.view()).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let sizes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    assert_eq!(sizes, analytic.iter().map(Vec::len).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (t, &len) in sizes.iter().enumerate() {
        let mut coords: Vec<usize> = (0..len).collect();
        coords.shuffle(&mut rng);
        coords.truncate(GRAD_COORDS_PER_TENSOR);
        for i in coords {
            let orig = params.param_slices()[t][i];
            params.param_slices_mut()[t][i] = orig + GRAD_STEP;
            let up = train_loss(&mut params, &ps, &pl, &targets);
            params.param_slices_mut()[t][i] = orig - GRAD_STEP;
            let down = train_loss(&mut params, &ps, &pl, &targets);
            params.param_slices_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic[t][i];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale == 0.0 { 0.0 } else { (a - numeric).abs() / scale };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut per_kind = Vec::new();
    for (k, kind) in Kind::ALL.into_iter().enumerate() {
        let (w, n) = gradient_check(kind, 100 + k as u64);
        worst = worst.max(w);
        per_kind.push(format!("{kind}:{n}:{w:.1e}"));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= GRAD_REL_TOL && elapsed < GRAD_TIME_LIMIT,
        format!(
            "max rel err {worst:.2e} (tol {GRAD_REL_TOL:.0e}) over coordinates [{}], {:.2}s (limit {}s)",
            per_kind.join(" "),
            elapsed.as_secs_f64(),
            GRAD_TIME_LIMIT.as_secs()
        ),
    )
}

fn distribution_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab_sizes = [2usize, 8, 32];
    let mut nets: BTreeMap<(usize, usize), CombinationParams> = BTreeMap::new();
    let (mut worst_sum, mut min_entry, mut failures) = (0.0f64, f64::INFINITY, 0usize);
    for call in 0..VALIDITY_CALLS {
        let k = call % Kind::ALL.len();
        let kind = Kind::ALL[k];
        let v = vocab_sizes[(call / Kind::ALL.len()) % vocab_sizes.len()];
        let mut ps = random_dist(&mut rng, v);
        let pl = random_dist(&mut rng, v);
        if rng.gen_bool(0.2) {
            let j = rng.gen_range(0..v);
            ps[j] = 0.0;
            let s: f64 = ps.iter().sum();
            ps.iter_mut().for_each(|x| *x /= s);
        }
        let params = if kind.is_constant() {
            let n = if kind.is_vector() { v } else { 1 };
            CombinationParams::constant(kind, v, (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect()).unwrap()
        } else {
            nets.entry((k, v))
                .or_insert_with(|| {
                    let mut p = CombinationParams::init(kind, v, (k * 31 + v) as u64);
                    p.set_mode(Mode::Eval);
                    p
                })
                .clone()
        };
        match params.combine(&ps, &pl) {
            Ok(pc) => {
                worst_sum = worst_sum.max((pc.iter().sum::<f64>() - 1.0).abs());
                min_entry = min_entry.min(pc.iter().copied().fold(f64::INFINITY, f64::min));
                if pc.iter().any(|x| !x.is_finite()) {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        worst_sum <= SUM_TOL && min_entry >= 0.0 && failures == 0,
        format!(
            "{VALIDITY_CALLS} calls: max |sum-1| {worst_sum:.1e} (tol {SUM_TOL:.0e}), min entry {min_entry:.2e}, errors {failures}"
        ),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Zeroes the final linear layer and sets its bias, so the weight is
/// `sigmoid(raw)` whatever the input.
fn saturate(params: &mut CombinationParams, raw: f64) {
    let mut slices = params.param_slices_mut();
    let n = slices.len();
    if params_is_network(n) {
        slices[n - 2].iter_mut().for_each(|w| *w = 0.0);
        slices[n - 1].iter_mut().for_each(|b| *b = raw);
    } else {
        slices[0].iter_mut().for_each(|x| *x = raw);
    }
}

fn params_is_network(slices: usize) -> bool {
    slices > 1
}

fn identity_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = 8;
    let mean = CombinationParams::mean(v);
    let half = CombinationParams::init(Kind::ConstantScalar, v, 0);
    let mut mean_err: f64 = 0.0;
    for _ in 0..1000 {
        let (ps, pl) = (random_dist(&mut rng, v), random_dist(&mut rng, v));
        mean_err = mean_err.max(max_abs_diff(&half.combine(&ps, &pl).unwrap(), &mean.combine(&ps, &pl).unwrap()));
    }

    let (mut sat_err, mut fixed_err): (f64, f64) = (0.0, 0.0);
    for (k, kind) in Kind::ALL.into_iter().enumerate() {
        let mut base = CombinationParams::init(kind, v, 50 + k as u64);
        base.set_mode(Mode::Eval);
        for _ in 0..100 {
            let ps = random_dist(&mut rng, v);
            let pc = base.combine(&ps, &ps).unwrap();
            fixed_err = fixed_err.max(max_abs_diff(&pc, &ps));
        }
        if kind == Kind::Mean {
            continue;
        }
        for (raw, pick_small) in [(SATURATED_RAW, true), (-SATURATED_RAW, false)] {
            let mut p = base.clone();
            saturate(&mut p, raw);
            p.set_mode(Mode::Eval);
            for _ in 0..100 {
                let (ps, pl) = (random_dist(&mut rng, v), random_dist(&mut rng, v));
                let want = if pick_small { &ps } else { &pl };
                sat_err = sat_err.max(max_abs_diff(&p.combine(&ps, &pl).unwrap(), want));
            }
        }
    }
    outcome(
        mean_err <= MEAN_TOL && sat_err <= SATURATION_TOL && fixed_err <= FIXED_POINT_TOL,
        format!(
            "λ=0.5 vs mean {mean_err:.1e} (tol {MEAN_TOL:.0e}); raw ±{SATURATED_RAW} vs pS/pL {sat_err:.1e} (tol {SATURATION_TOL:.0e}); pS=pL fixed point {fixed_err:.1e} (tol {FIXED_POINT_TOL:.0e})"
        ),
    )
}

fn desk_spec(dir: &std::path::Path) -> ExperimentSpec {
    let dom = dir.join("reviews.txt");
    let gen = dir.join("general.txt");
    std::fs::write(&dom, generate(&[Genre::Reviews], DOMAIN_BYTES, 1).unwrap()).unwrap();
    let mut mix: Vec<(Genre, f64)> = Genre::GENERAL.iter().map(|&g| (g, 1.0)).collect();
    mix.push((Genre::Reviews, DOMAIN_SHARE_IN_GENERAL));
    std::fs::write(&gen, generate_weighted(&mix, GENERAL_BYTES, 2).unwrap()).unwrap();
    let mut spec = ExperimentSpec::new(dom, gen);
    spec.name = "desk".into();
    spec.seq_len = SEQ_LEN;
    spec.n_fit = N_FIT;
    spec.n_test = N_TEST;
    spec.fit_sizes = FIT_SIZES.to_vec();
    spec
}

fn find<'a>(rows: &'a [ResultRow], condition: &str, model: &str) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.condition == condition && r.model == model)
        .unwrap_or_else(|| panic!("no row for {model} under {condition}"))
}

fn dom(rows: &[ResultRow], condition: &str, model: &str) -> f64 {
    find(rows, condition, model).domain_ppl.unwrap()
}

fn oracle_dominance(tables: &[&[ResultRow]]) -> Outcome {
    let mut comparisons = 0;
    let mut violations = Vec::new();
    for rows in tables {
        let mut conditions: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
        conditions.dedup();
        for cond in conditions {
            let oracle = find(rows, cond, "oracle");
            for r in rows.iter().filter(|r| r.condition == cond && r.model != "oracle") {
                let is_scalar_fit = r.model.parse::<Kind>().map_or(false, |k| !k.is_vector());
                if !(is_scalar_fit || r.model == "small" || r.model == "large") {
                    continue;
                }
                for (o, m) in [(oracle.domain_ppl, r.domain_ppl), (oracle.general_ppl, r.general_ppl)] {
                    if let (Some(o), Some(m)) = (o, m) {
                        comparisons += 1;
                        if !(o <= m) {
                            violations.push(format!("{}/{cond}/{}: {o} > {m}", r.experiment, r.model));
                        }
                    }
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!("{comparisons} comparisons, violations: {:?}", violations),
    )
}

fn protocol_round_trip(bench: &Workbench) -> Outcome {
    let large: Arc<dyn LanguageModel> = Arc::new(bench.large.clone());
    let server = LoopbackServer::start(large.clone(), "order-5 generalist").unwrap();
    let remote = RemoteLM::connect(server.url()).unwrap();
    let seqs = &bench.domain.test[..PROTOCOL_SEQUENCES];
    let local = dump_cache(&bench.small, large.as_ref(), seqs).unwrap();
    let over_wire = dump_cache(&bench.small, &remote, seqs).unwrap();
    let mut worst: f64 = 0.0;
    for t in 0..local.len() {
        worst = worst.max(max_abs_diff(&local.large_row(t), &over_wire.large_row(t)));
        worst = worst.max(max_abs_diff(&local.small_row(t), &over_wire.small_row(t)));
    }
    let targets_equal = local.targets() == over_wire.targets();
    outcome(
        worst <= PROTOCOL_TOL && targets_equal && local.len() == over_wire.len(),
        format!(
            "{} positions over loopback HTTP: max |Δp| {worst:.1e} (tol {PROTOCOL_TOL:.0e}); pure-Rust harness, no secondary component",
            local.len()
        ),
    )
}

fn run_criterion(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!("{} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    result.pass
}

fn main() -> ExitCode {
    let mut passed = Vec::new();
    passed.push(run_criterion("gradient-correctness", gradient_correctness));
    passed.push(run_criterion("distribution-validity", distribution_validity));
    passed.push(run_criterion("identity-suite", identity_suite));

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let prepared = panic::catch_unwind(AssertUnwindSafe(|| {
        let mut bench = Workbench::prepare(desk_spec(dir.path())).unwrap();
        let main_rows = bench.run_main().unwrap();
        (bench, main_rows)
    }));
    let pipeline_time = start.elapsed();
    let (mut bench, main_rows) = match prepared {
        Ok(x) => x,
        Err(_) => {
            println!("FAIL desk-scale setup: could not prepare models and caches");
            return ExitCode::FAILURE;
        }
    };
    let fit_rows = bench.run_fit_size().unwrap_or_default();
    let small_rows = bench.run_small_model().unwrap_or_default();
    let mixin_rows = bench.run_mixin().unwrap_or_default();

    passed.push(run_criterion("oracle-dominance", || {
        oracle_dominance(&[&main_rows, &fit_rows, &small_rows, &mixin_rows])
    }));

    passed.push(run_criterion("table1-desk-scale", || {
        let c = "domain-fit";
        let (small, large) = (dom(&main_rows, c, "small"), dom(&main_rows, c, "large"));
        let (es, mean) = (dom(&main_rows, c, "entropy-scalar"), dom(&main_rows, c, "mean"));
        outcome(
            large > small && es < small && es < large && es <= mean * (1.0 + MEAN_SLACK) && pipeline_time < PIPELINE_TIME_LIMIT,
            format!(
                "in-domain ppl: expert {small:.4}, generalist {large:.4}, mean {mean:.4}, entropy-scalar {es:.4}; end-to-end {:.1}s (limit {}s)",
                pipeline_time.as_secs_f64(),
                PIPELINE_TIME_LIMIT.as_secs()
            ),
        )
    }));

    passed.push(run_criterion("ensembling-effect-control", || {
        let large = dom(&small_rows, "generalist", "large");
        let combined: Vec<(String, f64)> = Kind::ALL
            .iter()
            .map(|k| (k.name().to_string(), dom(&small_rows, "generalist", k.name())))
            .collect();
        let lowest = combined.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        outcome(
            lowest >= GENERALIST_FLOOR * large,
            format!(
                "generalist ppl {large:.4}; combined with a second generalist: {} (floor {:.4})",
                combined.iter().map(|(k, p)| format!("{k} {p:.4}")).collect::<Vec<_>>().join(", "),
                GENERALIST_FLOOR * large
            ),
        )
    }));

    passed.push(run_criterion("fit-size-behavior", || {
        let (lo, hi) = (FIT_SIZES[0].to_string(), FIT_SIZES[1].to_string());
        let (cs_lo, cs_hi) = (dom(&fit_rows, &lo, "constant-scalar"), dom(&fit_rows, &hi, "constant-scalar"));
        let (fs_lo, fs_hi) = (dom(&fit_rows, &lo, "full-scalar"), dom(&fit_rows, &hi, "full-scalar"));
        let cs_rel = (cs_lo - cs_hi).abs() / cs_hi;
        outcome(
            cs_rel < CONSTANT_FIT_SIZE_TOL && fs_hi <= fs_lo * (1.0 + FULL_FIT_SIZE_SLACK),
            format!(
                "constant-scalar {lo}: {cs_lo:.4} vs {hi}: {cs_hi:.4} (rel {cs_rel:.2e} < {CONSTANT_FIT_SIZE_TOL}); full-scalar {lo}: {fs_lo:.4} vs {hi}: {fs_hi:.4}"
            ),
        )
    }));

    passed.push(run_criterion("mixin-behavior", || {
        let d = find(&mixin_rows, "domain-fit", "full-scalar");
        let m = find(&mixin_rows, "mixin-fit", "full-scalar");
        let (small, large) = (dom(&mixin_rows, "domain-fit", "small"), dom(&mixin_rows, "domain-fit", "large"));
        let (dg, mg, md) = (d.general_ppl.unwrap(), m.general_ppl.unwrap(), m.domain_ppl.unwrap());
        outcome(
            mg <= dg && md < small && md < large,
            format!(
                "full-scalar general ppl: mixin-fit {mg:.4} vs domain-fit {dg:.4}; in-domain mixin-fit {md:.4} vs expert {small:.4}, generalist {large:.4}"
            ),
        )
    }));

    passed.push(run_criterion("spearman-analysis", || {
        let n = bench.spec.n_fit;
        let params = bench.domain_fit_params(Kind::EntropyScalar, n).unwrap().clone();
        let rho = analyze(&bench.domain_test, &params).unwrap().rho;
        let up = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap();
        let down = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 3.0, 1.0, 0.0, -9.0]).unwrap();
        outcome(
            rho > RHO_MIN && up == 1.0 && down == -1.0,
            format!("entropy-scalar rho {rho:.4} (> {RHO_MIN}) on {} test tokens; hand cases {up}, {down}", bench.domain_test.len()),
        )
    }));

    passed.push(run_criterion("protocol-round-trip", || protocol_round_trip(&bench)));

    let n_pass = passed.iter().filter(|&&p| p).count();
    println!("{n_pass}/{} criteria passed", passed.len());
    if n_pass == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
