use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use proptest::prelude::*;
use rexrank::archspec::{
    build_rexnet, build_rexnet_lite, build_rexnet_plain, calibrate_linear, channels_from_linear, fit_linear,
    fit_linear_in, Family, Layout, LinearParam, ModelSpec, REXNET_TARGET,
};
use rexrank::costmodel::{
    format_config_string, model_cost, parse_config_string, Budget, CostReport,
};
use rexrank::numerics::{
    batch_standardize, gram_singular_values, matmul, nuclear_norm, numerical_rank, singular_values, Nonlinearity,
    RankSettings,
};
use rexrank::randnet::{default_batch, run_sweep, sample_network, LayerArch, SweepSpec};
use rexrank::search::{
    aggregate, run_search, sample_candidates, score_with, FitnessKind, SearchSpec, CANDIDATES_FILE, SCORES_FILE,
};
use rexrank::Matrix;

const TABLE1_ROWS: [&str; 10] = [
    "32 / 16(×1)-24(×2)-32(×3)-64(×4)-96(×3)-160(×3)-320(×1)",
    "16 / 16(×1)-24(×4)-32(×4)-64(×4)-112(×4)-184(×4)-352(×1)",
    "32 / 16(×1)-32(×2)-40(×4)-80(×4)-96(×4)-192(×4)-320(×1)",
    "32 / 16(×1)-24(×2)-40(×3)-80(×4)-112(×2)-160(×3)-320(×1)",
    "24 / 24(×1)-32(×2)-40(×4)-80(×4)-120(×4)-200(×4)",
    "32 / 16(×1)-24(×2)-40(×2)-80(×3)-112(×3)-192(×4)-320(×1)",
    "32 / 16(×1)-24(×4)-40(×4)-80(×4)-96(×4)-192(×4)-320(×1)",
    "32 / 16(×1)-32(×2)-40(×4)-80(×4)-96(×4)-192(×4)-320(×1)",
    "32 / 16(×1)-32(×2)-40(×4)-80(×5)-96(×3)-192(×4)-320(×1)",
    "32 / 16(×1)-24(×4)-40(×4)-80(×4)-96(×4)-192(×4)-320(×1)",
];

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn arb_matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| matrix(r, c, d))
    })
}

/// Product of two random factors with a small inner dimension: rank-deficient
/// inputs exercise the threshold.
fn arb_low_rank(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max, 1..=3usize).prop_flat_map(|(r, c, k)| {
        (
            prop::collection::vec(-3.0f64..3.0, r * k),
            prop::collection::vec(-3.0f64..3.0, k * c),
        )
            .prop_map(move |(a, b)| matmul(&matrix(r, k, a), &matrix(k, c, b)).unwrap())
    })
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a.get(i, p) * b.get(p, j)).sum();
        }
    }
    out
}

fn nalgebra_singular_values(m: &Matrix) -> Vec<f64> {
    let n = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    let mut sv: Vec<f64> = n.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

// ---------------------------------------------------------------- numerics

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_bounded_by_min_dim(m in prop_oneof![arb_matrix(12), arb_low_rank(12)]) {
        let r = numerical_rank(&m, &RankSettings::default()).unwrap();
        prop_assert!(r <= m.rows().min(m.cols()));
        let sv = singular_values(&m).unwrap();
        let nuc = nuclear_norm(&m).unwrap();
        prop_assert!(sv[0] >= 0.0);
        prop_assert!(nuc >= sv[0] - 1e-12);
    }

    #[test]
    fn product_rank_is_submultiplicative(a in arb_low_rank(8), c in 1..8usize, seed in any::<u64>()) {
        let mut s = seed | 1;
        let data: Vec<f64> = (0..a.cols() * c).map(|_| {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }).collect();
        let b = matrix(a.cols(), c, data);
        let st = RankSettings::new(1e-8).unwrap();
        let ab = numerical_rank(&matmul(&a, &b).unwrap(), &st).unwrap();
        let ra = numerical_rank(&a, &st).unwrap();
        let rb = numerical_rank(&b, &st).unwrap();
        prop_assert!(ab <= ra.min(rb), "rank(AB)={ab} rank(A)={ra} rank(B)={rb}");
    }

    #[test]
    fn transpose_keeps_spectrum(m in arb_matrix(12)) {
        let a = singular_values(&m).unwrap();
        let b = singular_values(&m.transpose()).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn singular_values_match_nalgebra(m in prop_oneof![arb_matrix(12), arb_low_rank(12)]) {
        let ours = singular_values(&m).unwrap();
        let theirs = nalgebra_singular_values(&m);
        let scale = theirs[0].max(1.0);
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-9 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn gram_spectrum_matches_jacobi(m in arb_matrix(12)) {
        let jac = singular_values(&m).unwrap();
        let gram = gram_singular_values(&m).unwrap();
        prop_assert_eq!(jac.len(), gram.len());
        for (x, y) in jac.iter().zip(&gram) {
            // Accuracy of the Gram route degrades to about sqrt(eps) · σ_max.
            prop_assert!((x - y).abs() <= 1e-6 * jac[0].max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_matches_naive(a in arb_matrix(9), n in 1..9usize, seed in any::<u64>()) {
        let b = Matrix::from_fn(a.cols(), n, |i, j| ((seed >> (i % 8)) as f64 + j as f64).sin());
        let fast = matmul(&a, &b).unwrap();
        for (x, y) in fast.as_slice().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn standardize_is_idempotent(m in arb_matrix(8).prop_filter("two columns", |m| m.cols() >= 2)) {
        let once = batch_standardize(&m).unwrap();
        let twice = batch_standardize(&once).unwrap();
        for (x, y) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn relu6_range(x in -1e3f64..1e3) {
        let y = Nonlinearity::ReLU6.apply(x);
        prop_assert!((0.0..=6.0).contains(&y));
    }
}

#[test]
fn nonlinearity_closed_forms() {
    let ln2 = std::f64::consts::LN_2;
    for f in Nonlinearity::ALL {
        let z = f.apply(0.0f64);
        let expect = if f == Nonlinearity::SoftPlus { ln2 } else { 0.0 };
        assert!((z - expect).abs() <= 1e-9, "{f}(0) = {z}");
    }
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let cases: [(Nonlinearity, f64, f64); 14] = [
        (Nonlinearity::SiLU, 30.0, 30.0),
        (Nonlinearity::SiLU, 1.0, sig(1.0)),
        (Nonlinearity::SiLU, -2.0, -2.0 * sig(-2.0)),
        (Nonlinearity::ReLU, -3.5, 0.0),
        (Nonlinearity::ReLU6, 7.25, 6.0),
        (Nonlinearity::ReLU6, 2.5, 2.5),
        (Nonlinearity::elu(), -1.0, (-1.0f64).exp() - 1.0),
        (Nonlinearity::elu(), 2.0, 2.0),
        (Nonlinearity::leaky_relu(), -2.0, -0.02),
        (Nonlinearity::SoftPlus, 1.0, (1.0 + 1.0f64.exp()).ln()),
        (Nonlinearity::SoftPlus, -40.0, (1.0 + (-40.0f64).exp()).ln()),
        (Nonlinearity::HardSwish, 1.0, 1.0 * 4.0 / 6.0),
        (Nonlinearity::HardSwish, -4.0, 0.0),
        (Nonlinearity::Identity, -7.5, -7.5),
    ];
    for (f, x, want) in cases {
        let got = f.apply(x);
        assert!((got - want).abs() <= 1e-9, "{f}({x}) = {got}, want {want}");
    }
}

// ----------------------------------------------------------------- randnet

#[test]
fn identity_conv1x1_rank_is_input_width() {
    let st = RankSettings::default();
    // d_in < d_out: a square Gaussian map is too ill-conditioned for an exact
    // count at a relative threshold.
    for d_out in [32usize, 57, 96, 128] {
        for r in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let d_in = ((r * d_out as f64).round() as usize).clamp(1, d_out - 1);
            for seed in 0..8 {
                let net = sample_network(LayerArch::Conv1x1, d_in, d_out, seed).unwrap();
                let batch = default_batch(&LayerArch::Conv1x1, d_out, 1);
                let s = net.forward_and_rank(Nonlinearity::Identity, batch, &st, seed + 100).unwrap();
                assert_eq!(
                    (s.rank_ratio * d_out as f64).round() as usize,
                    d_in,
                    "d_in={d_in} d_out={d_out} seed={seed}"
                );
            }
        }
    }
}

#[test]
fn sweeps_are_deterministic_and_bounded() {
    let mut spec = SweepSpec::new(LayerArch::ib_dw(), Nonlinearity::SiLU);
    spec.trials = 6;
    spec.d_out_range = (16, 40);
    let st = RankSettings::default();
    let a = run_sweep(&spec, &st).unwrap();
    let b = run_sweep(&spec, &st).unwrap();
    assert_eq!(a, b);
    for p in &a.points {
        assert!((0.0..=1.0).contains(&p.mean_rank_ratio));
    }
}

#[test]
fn nonlinearities_expand_rank_for_every_arch() {
    let st = RankSettings::default();
    for arch in [LayerArch::Conv1x1, LayerArch::Conv3x3, LayerArch::ib_conv(), LayerArch::ib_dw()] {
        for f in Nonlinearity::ALL.into_iter().filter(|f| !f.is_identity()) {
            let mut spec = SweepSpec::new(arch, f);
            // Smaller networks keep the full-conv bottleneck affordable.
            spec.trials = 8;
            spec.d_out_range = (16, 48);
            let curve = run_sweep(&spec, &st).unwrap();
            for p in &curve.points {
                assert!(
                    p.mean_rank_ratio >= p.ratio - 0.02,
                    "{arch}/{f}: {} at r={}",
                    p.mean_rank_ratio,
                    p.ratio
                );
            }
        }
    }
}

#[test]
fn depthwise_bottleneck_rank_grows_with_ratio() {
    let st = RankSettings::default();
    for f in Nonlinearity::ALL.into_iter().filter(|f| !f.is_identity()) {
        let mut spec = SweepSpec::new(LayerArch::ib_dw(), f);
        spec.ratio_grid = vec![0.1, 1.0];
        spec.trials = 200;
        let c = run_sweep(&spec, &st).unwrap();
        assert!(
            c.points[1].mean_rank_ratio >= c.points[0].mean_rank_ratio,
            "{f}: {:?}",
            c.points
        );
    }
}

// --------------------------------------------------------------- costmodel

fn arb_spec() -> impl Strategy<Value = ModelSpec> {
    (prop::sample::select(Family::ALL.to_vec()), 0.5f64..3.0).prop_map(|(f, m)| match f {
        Family::Rexnet => build_rexnet(m).unwrap(),
        Family::Plain => build_rexnet_plain(m).unwrap(),
        Family::Lite => build_rexnet_lite(m).unwrap(),
    })
}

fn body_params(r: &CostReport) -> u64 {
    r.per_layer
        .iter()
        .filter(|l| l.name.starts_with("blocks."))
        .map(|l| l.params)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cost_is_additive(spec in arb_spec(), res in prop::sample::select(vec![128usize, 160, 224, 256])) {
        let r = model_cost(&spec, res, spec.head.classes).unwrap();
        prop_assert_eq!(r.params, r.per_layer.iter().map(|l| l.params).sum::<u64>());
        prop_assert_eq!(r.macs, r.per_layer.iter().map(|l| l.macs).sum::<u64>());
    }

    #[test]
    fn widening_a_block_never_reduces_cost(spec in arb_spec(), idx in any::<prop::sample::Index>(), extra in 1..64usize) {
        let base = model_cost(&spec, 224, 1000).unwrap();
        let mut wider = spec.clone();
        let i = idx.index(wider.blocks.len());
        wider.blocks[i].out_channels += extra;
        let w = model_cost(&wider, 224, 1000).unwrap();
        prop_assert!(w.params >= base.params && w.macs >= base.macs);
    }

    #[test]
    fn width_multiplier_scales_body_params_quadratically(m in 0.5f64..3.0) {
        let one = body_params(&model_cost(&build_rexnet(1.0).unwrap(), 224, 1000).unwrap()) as f64;
        let scaled = body_params(&model_cost(&build_rexnet(m).unwrap(), 224, 1000).unwrap()) as f64;
        let ratio = scaled / (one * m * m);
        prop_assert!((ratio - 1.0).abs() <= 0.05, "m={m}: ratio {ratio}");
    }

    #[test]
    fn spec_json_round_trip(spec in arb_spec()) {
        let back = ModelSpec::from_json(&spec.to_json()).unwrap();
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn config_strings_round_trip() {
    for row in TABLE1_ROWS {
        let parsed = parse_config_string(row).unwrap();
        let text = format_config_string(&parsed);
        assert_eq!(text, row);
        assert_eq!(parse_config_string(&text).unwrap(), parsed);
    }
}

#[test]
fn exported_specs_validate_against_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/rexrank-spec-1.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let mut specs = vec![
        build_rexnet(1.0).unwrap(),
        build_rexnet_plain(1.0).unwrap(),
        build_rexnet_lite(2.0).unwrap(),
        parse_config_string(TABLE1_ROWS[0]).unwrap().to_model_spec("mbv2", 1000),
    ];
    let mut tagged = specs[0].clone();
    tagged.metadata = Some(serde_json::json!({"seed": 1}));
    specs.push(tagged);
    for s in &specs {
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        let msgs: Vec<String> = match compiled.validate(&v) {
            Ok(()) => Vec::new(),
            Err(errors) => errors.map(|e| e.to_string()).collect(),
        };
        assert!(msgs.is_empty(), "{}: {msgs:?}", s.name);
    }
    let mut bad: serde_json::Value = serde_json::from_str(&specs[0].to_json()).unwrap();
    bad["blocks"][0]["stride"] = serde_json::json!("two");
    assert!(!compiled.is_valid(&bad));
}

// ---------------------------------------------------------------- archspec

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn linear_fit_recovers_parameters(a in 0.0f64..=20.0, b in 8.0f64..=60.0, d in 5usize..=30) {
        let p = LinearParam::new(a, b, d).unwrap();
        let ch = channels_from_linear(&p).unwrap();
        let f = fit_linear(&ch).unwrap();
        prop_assert!((f.slope - a).abs() <= 0.5, "slope {} vs {a}", f.slope);
        prop_assert!((f.intercept - b).abs() <= 1.5, "intercept {} vs {b}", f.intercept);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn builders_respect_family_rules(spec in arb_spec()) {
        let ch = spec.channels();
        prop_assert!(ch.windows(2).all(|w| w[0] <= w[1]));
        let expected = if spec.name.contains("plain") { 13 } else { 17 };
        prop_assert_eq!(ch.len(), expected, "{}", spec.name);
        for b in &spec.blocks {
            prop_assert!(matches!(b.act_after_dw, Nonlinearity::ReLU6 | Nonlinearity::ReLU));
        }
    }
}

#[test]
fn calibration_replays_exactly() {
    let layout = Layout::new(Family::Rexnet, 1.0);
    let budget = Budget::new(Some(REXNET_TARGET.0), Some(REXNET_TARGET.1)).unwrap();
    let cal = calibrate_linear(&layout, &budget, 224).unwrap();
    let r = model_cost(&layout.spec_with(&cal.param).unwrap(), 224, 1000).unwrap();
    assert_eq!((r.params, r.macs), (cal.params, cal.macs));
}

// ------------------------------------------------------------------ search

fn small_spec(n: usize) -> SearchSpec {
    let mut s = SearchSpec::new(5, Budget::new(Some(200_000), Some(30_000_000)).unwrap());
    s.num_candidates = n;
    s
}

#[test]
fn candidates_satisfy_constraints_on_replay() {
    let s = small_spec(60);
    for c in sample_candidates(&s).unwrap() {
        assert!(c.channels.windows(2).all(|w| w[0] <= w[1]));
        let r = s.cost_of(&c.channels).unwrap();
        assert!(s.budget.admits(r.cost()), "{:?}", c.channels);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn decile_scores_are_ordered(n in 10usize..80, salt in any::<u64>(), distinct in any::<bool>()) {
        let s = small_spec(n);
        let cands = sample_candidates(&s).unwrap();
        let scored = score_with(cands, |c| {
            let h = rexrank::seed::derive_seed(salt, &[c.id as u64]);
            if distinct { (h >> 11) as f64 } else { (h % 3) as f64 }
        });
        let run = aggregate(&s, scored).unwrap();
        let d = &run.deciles;
        prop_assert!(d.top10.mean_score >= d.mid10.mean_score);
        prop_assert!(d.mid10.mean_score >= d.bottom10.mean_score);
        if distinct && n >= 20 {
            prop_assert!(d.top10.mean_score > d.mid10.mean_score);
            prop_assert!(d.mid10.mean_score > d.bottom10.mean_score);
        }
    }
}

#[test]
fn search_is_deterministic_across_thread_counts() {
    let mut s = small_spec(12);
    s.fitness = FitnessKind::RankScore {
        trials: 8,
        settings: RankSettings::default(),
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_search(&s)).unwrap();
    let b = four.install(|| run_search(&s)).unwrap();
    assert_eq!(a, b);
}

/// Stand-in for an out-of-process trainer: answers `candidates.json` with
/// `score(entry)` for every candidate entry once the file appears.
fn spawn_echo_scorer(dir: &Path, score: fn(&serde_json::Value) -> f64) -> thread::JoinHandle<()> {
    let dir = dir.to_path_buf();
    thread::spawn(move || {
        let path = dir.join(CANDIDATES_FILE);
        let text = loop {
            if let Ok(t) = fs::read_to_string(&path) {
                break t;
            }
            thread::sleep(Duration::from_millis(10));
        };
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let scores: Vec<serde_json::Value> = v["candidates"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| serde_json::json!({"id": c["id"], "score": score(c)}))
            .collect();
        let out = serde_json::json!({"run_id": v["run_id"], "scores": scores});
        let tmp = dir.join("scores.tmp");
        fs::write(&tmp, out.to_string()).unwrap();
        fs::rename(tmp, dir.join(SCORES_FILE)).unwrap();
    })
}

fn linear_rms(ch: &[usize]) -> f64 {
    fit_linear(ch).unwrap().rms_residual
}

fn external_spec(n: usize, dir: &Path) -> SearchSpec {
    let mut s = small_spec(n);
    s.fitness = FitnessKind::External {
        exchange_dir: dir.to_path_buf(),
        timeout: Some(Duration::from_secs(60)),
    };
    s
}

#[test]
fn echo_scorer_rewarding_linearity_picks_the_straightest() {
    let dir = tempfile::tempdir().unwrap();
    let s = external_spec(40, dir.path());
    let scorer = spawn_echo_scorer(dir.path(), |c| {
        let ch: Vec<usize> = serde_json::from_value(c["channels"].clone()).unwrap();
        -linear_rms(&ch)
    });
    let run = run_search(&s).unwrap();
    scorer.join().unwrap();
    let best = linear_rms(&run.best.channels);
    for id in &run.deciles.bottom10.members {
        assert!(best <= linear_rms(&run.candidates[*id].channels));
    }
    let min = run.candidates.iter().map(|c| linear_rms(&c.channels)).fold(f64::INFINITY, f64::min);
    assert_eq!(best, min);
}

#[test]
fn echo_scorer_on_params_prefers_small_models() {
    let dir = tempfile::tempdir().unwrap();
    let s = external_spec(20, dir.path());
    let scorer = spawn_echo_scorer(dir.path(), |c| -c["params"].as_f64().unwrap());
    let run = run_search(&s).unwrap();
    scorer.join().unwrap();
    let min = run.candidates.iter().map(|c| c.cost.params).min().unwrap();
    assert_eq!(run.best.cost.params, min);
    let ids: BTreeSet<usize> = run.ranking.iter().copied().collect();
    assert_eq!(ids.len(), 20);
}

#[test]
fn rexnet_default_is_a_straight_line() {
    let ch = build_rexnet(1.0).unwrap().channels();
    let f = fit_linear_in::<f64>(&ch.iter().map(|&c| c as f64).collect::<Vec<_>>()).unwrap();
    assert!(f.rms_residual < 1.0);
}
