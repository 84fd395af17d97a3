//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxelconv::bench::{run_bench, BenchConfig, BenchOperator, BenchReport};
use voxelconv::coord::{LctBackend, LctConfig, LocationTable, StrideSpec};
use voxelconv::engine::{
    inverse_conv, sparse_conv, subm_conv, ComputePath, ExecOptions, WeightTensor,
};
use voxelconv::format::{decode_tensor, encode_tensor, load_tensor, save_tensor};
use voxelconv::oracle::{random_features, random_sparse_tensor, random_weights, OracleCheck};
use voxelconv::rules::{
    build_downsample_oft, build_inverse_map, build_subm_oft, count_unique_outputs,
};
use voxelconv::{with_workers, Error, GridShape, IndexSet, SparseTensor, VoxelCoord, VoxelIndices};

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const TOL: f64 = 1e-4;
const CASES: usize = 100;
const SUBM_TIME_LIMIT: Duration = Duration::from_secs(120);

struct Outcome {
    ok: bool,
    detail: String,
}

impl Outcome {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }
}

#[derive(Clone)]
struct SubmCase {
    seed: u64,
    t: SparseTensor,
    w: WeightTensor,
    k: usize,
}

#[derive(Clone)]
struct StridedCase {
    seed: u64,
    t: SparseTensor,
    w: WeightTensor,
    s: u32,
}

#[derive(Clone)]
struct InverseCase {
    seed: u64,
    fine: IndexSet,
    coarse: SparseTensor,
    w: WeightTensor,
    s: u32,
}

fn random_shape(rng: &mut ChaCha8Rng) -> GridShape {
    GridShape::new(
        rng.gen_range(4..=32),
        rng.gen_range(4..=32),
        rng.gen_range(4..=32),
        rng.gen_range(1..=2),
    )
    .unwrap()
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    *xs.choose(rng).unwrap()
}

fn subm_cases() -> Vec<SubmCase> {
    (0..CASES as u64)
        .map(|i| {
            let seed = 10_000 + i;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = random_shape(&mut rng);
            let density = rng.gen_range(0.01..=0.10);
            let c_in = pick(&mut rng, &[1, 4, 8]);
            let c_out = pick(&mut rng, &[1, 4, 8]);
            let k = pick(&mut rng, &[1usize, 3, 5]);
            SubmCase {
                seed,
                t: random_sparse_tensor(seed, shape, density, c_in).unwrap(),
                w: random_weights(seed, c_out, c_in, k.pow(3)).unwrap(),
                k,
            }
        })
        .collect()
}

fn strided_cases() -> Vec<StridedCase> {
    (0..CASES as u64)
        .map(|i| {
            let seed = 20_000 + i;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = random_shape(&mut rng);
            let density = rng.gen_range(0.01..=0.10);
            let c_in = pick(&mut rng, &[1, 4, 8]);
            let c_out = pick(&mut rng, &[1, 4, 8]);
            let s = pick(&mut rng, &[2u32, 3, 4]);
            StridedCase {
                seed,
                t: random_sparse_tensor(seed, shape, density, c_in).unwrap(),
                w: random_weights(seed, c_out, c_in, (s as usize).pow(3)).unwrap(),
                s,
            }
        })
        .collect()
}

fn inverse_cases() -> Vec<InverseCase> {
    (0..CASES as u64)
        .map(|i| {
            let seed = 30_000 + i;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = random_shape(&mut rng);
            let density = rng.gen_range(0.01..=0.10);
            let c_in = pick(&mut rng, &[1, 4, 8]);
            let c_out = pick(&mut rng, &[1, 4, 8]);
            let s = pick(&mut rng, &[2u32, 3, 4]);
            let fine = random_sparse_tensor(seed, shape, density, 1).unwrap();
            let stride = StrideSpec::new(s).unwrap();
            let (dmap, _) = build_downsample_oft(fine.sites(), stride, &LctConfig::default()).unwrap();
            InverseCase {
                seed,
                fine: fine.sites().clone(),
                coarse: random_features(seed, dmap.out_sites().clone(), c_in).unwrap(),
                w: random_weights(seed, c_out, c_in, stride.cell_volume()).unwrap(),
                s,
            }
        })
        .collect()
}

fn opts(path: ComputePath, backend: LctBackend) -> ExecOptions {
    ExecOptions {
        path,
        lct: LctConfig::with_backend(backend),
    }
}

fn check(seed: u64) -> OracleCheck {
    OracleCheck {
        tol: TOL,
        opts: ExecOptions::default(),
        seed,
    }
}

fn bits(t: &SparseTensor) -> Vec<u32> {
    t.features().iter().map(|v| v.to_bits()).collect()
}

fn run_subm(c: &SubmCase, o: &ExecOptions) -> SparseTensor {
    voxelconv::engine::submanifold(&c.t, c.k, &c.w, o).unwrap()
}

fn run_down(c: &StridedCase, o: &ExecOptions) -> SparseTensor {
    voxelconv::engine::downsample(&c.t, StrideSpec::new(c.s).unwrap(), &c.w, o).unwrap()
}

fn run_inv(c: &InverseCase, o: &ExecOptions) -> SparseTensor {
    voxelconv::engine::upsample(&c.coarse, &c.fine, StrideSpec::new(c.s).unwrap(), &c.w, o).unwrap()
}

fn criterion_subm(cases: &[SubmCase]) -> Outcome {
    let start = Instant::now();
    let mut passed = 0;
    let mut max_err = 0.0f64;
    let mut first = None;
    for c in cases {
        let r = check(c.seed).subm(&c.t, &c.w, c.k);
        max_err = max_err.max(r.max_abs_err);
        if r.all_passed() {
            passed += 1;
        } else if first.is_none() {
            first = r.first_failure;
        }
    }
    let elapsed = start.elapsed();
    let ok = passed == cases.len() && elapsed < SUBM_TIME_LIMIT;
    Outcome::new(
        ok,
        format!(
            "{passed}/{} cases within {TOL:e}, max abs err {max_err:.2e}, {:.1}s (limit {}s){}",
            cases.len(),
            elapsed.as_secs_f64(),
            SUBM_TIME_LIMIT.as_secs(),
            first.map(|f| format!("; first failure {f:?}")).unwrap_or_default()
        ),
    )
}

/// Distinct stride cells computed with a plain hash set.
fn set_oracle_cells(t: &SparseTensor, s: u32) -> HashSet<VoxelCoord> {
    let s = s as i32;
    t.indices()
        .iter()
        .map(|c| VoxelCoord::new(c.batch, c.x / s, c.y / s, c.z / s))
        .collect()
}

fn criterion_down(cases: &[StridedCase]) -> Outcome {
    let mut passed = 0;
    let mut count_ok = 0;
    let mut max_err = 0.0f64;
    let mut first = None;
    for c in cases {
        let r = check(c.seed).downsample(&c.t, &c.w, c.s);
        max_err = max_err.max(r.max_abs_err);
        if r.all_passed() {
            passed += 1;
        } else if first.is_none() {
            first = r.first_failure;
        }
        let expected = set_oracle_cells(&c.t, c.s);
        let stride = StrideSpec::new(c.s).unwrap();
        let counts_match = [LctBackend::Dense, LctBackend::Hash].iter().all(|&b| {
            let state = count_unique_outputs(c.t.sites(), stride, &LctConfig::with_backend(b));
            state.count() == expected.len()
                && expected.iter().all(|&cell| state.is_occupied(cell).unwrap())
        });
        count_ok += counts_match as usize;
    }
    Outcome::new(
        passed == cases.len() && count_ok == cases.len(),
        format!(
            "{passed}/{} cases within {TOL:e} (max abs err {max_err:.2e}), unique counts exact in {count_ok}/{}{}",
            cases.len(),
            cases.len(),
            first.map(|f| format!("; first failure {f:?}")).unwrap_or_default()
        ),
    )
}

fn criterion_inverse(cases: &[InverseCase]) -> Outcome {
    let mut passed = 0;
    let mut round_trips = 0;
    let mut max_err = 0.0f64;
    let mut first = None;
    for c in cases {
        let r = check(c.seed).inverse(&c.fine, &c.coarse, &c.w, c.s);
        max_err = max_err.max(r.max_abs_err);
        if r.all_passed() {
            passed += 1;
        } else if first.is_none() {
            first = r.first_failure;
        }
        let stride = StrideSpec::new(c.s).unwrap();
        let cfg = LctConfig::default();
        let (dmap, _) = build_downsample_oft(&c.fine, stride, &cfg).unwrap();
        let round_trip = match build_inverse_map(&c.fine, dmap.out_sites(), stride, &cfg) {
            Ok(imap) => imap.pairs() == dmap.pairs(),
            Err(_) => false,
        };
        let out = run_inv(c, &ExecOptions::default());
        round_trips += (round_trip && out.sites() == &c.fine) as usize;
    }
    Outcome::new(
        passed == cases.len() && round_trips == cases.len(),
        format!(
            "{passed}/{} cases within {TOL:e} (max abs err {max_err:.2e}), exact fine-set round trips {round_trips}/{}{}",
            cases.len(),
            cases.len(),
            first.map(|f| format!("; first failure {f:?}")).unwrap_or_default()
        ),
    )
}

fn criterion_paths(subm: &[SubmCase], down: &[StridedCase], inv: &[InverseCase]) -> Outcome {
    let r = opts(ComputePath::Reference, LctBackend::Auto);
    let o = opts(ComputePath::Optimized, LctBackend::Auto);
    let mut mismatches = Vec::new();
    for c in subm {
        if bits(&run_subm(c, &r)) != bits(&run_subm(c, &o)) {
            mismatches.push(format!("subm seed {}", c.seed));
        }
    }
    for c in down {
        if bits(&run_down(c, &r)) != bits(&run_down(c, &o)) {
            mismatches.push(format!("down seed {}", c.seed));
        }
    }
    for c in inv {
        if bits(&run_inv(c, &r)) != bits(&run_inv(c, &o)) {
            mismatches.push(format!("inv seed {}", c.seed));
        }
    }
    let total = subm.len() + down.len() + inv.len();
    Outcome::new(
        mismatches.is_empty(),
        format!(
            "{}/{total} cases bitwise identical{}",
            total - mismatches.len(),
            mismatches.first().map(|m| format!("; first mismatch {m}")).unwrap_or_default()
        ),
    )
}

fn criterion_determinism(subm: &[SubmCase], down: &[StridedCase], inv: &[InverseCase]) -> Outcome {
    let o = ExecOptions::default();
    let files = |workers: usize| -> Vec<Vec<u8>> {
        with_workers(workers, || {
            let mut out = Vec::new();
            for _ in 0..2 {
                out.extend(subm.iter().map(|c| encode_tensor(&run_subm(c, &o))));
                out.extend(down.iter().map(|c| encode_tensor(&run_down(c, &o))));
                out.extend(inv.iter().map(|c| encode_tensor(&run_inv(c, &o))));
            }
            out
        })
        .unwrap()
    };
    let single = files(1);
    let auto = files(0);
    let four = files(4);
    let ok = single == auto && single == four;
    Outcome::new(
        ok,
        format!(
            "{} output files per worker setting (1, auto={}, 4), identical: {ok}",
            single.len(),
            rayon::current_num_threads()
        ),
    )
}

fn criterion_backends(subm: &[SubmCase], down: &[StridedCase], inv: &[InverseCase]) -> Outcome {
    let dense = LctConfig::with_backend(LctBackend::Dense);
    let hash = LctConfig::with_backend(LctBackend::Hash);
    let mut bad = Vec::new();
    for c in subm {
        let a = LocationTable::build(c.t.sites(), &dense).unwrap();
        let b = LocationTable::build(c.t.sites(), &hash).unwrap();
        if build_subm_oft(c.t.sites(), &a, c.k).unwrap() != build_subm_oft(c.t.sites(), &b, c.k).unwrap() {
            bad.push(format!("subm seed {}", c.seed));
        }
    }
    for c in down {
        let s = StrideSpec::new(c.s).unwrap();
        if build_downsample_oft(c.t.sites(), s, &dense).unwrap()
            != build_downsample_oft(c.t.sites(), s, &hash).unwrap()
        {
            bad.push(format!("down seed {}", c.seed));
        }
    }
    for c in inv {
        let s = StrideSpec::new(c.s).unwrap();
        if build_inverse_map(&c.fine, c.coarse.sites(), s, &dense).unwrap()
            != build_inverse_map(&c.fine, c.coarse.sites(), s, &hash).unwrap()
        {
            bad.push(format!("inv seed {}", c.seed));
        }
    }
    let total = subm.len() + down.len() + inv.len();
    Outcome::new(
        bad.is_empty(),
        format!(
            "{}/{total} rule tables identical across dense and hash{}",
            total - bad.len(),
            bad.first().map(|m| format!("; first mismatch {m}")).unwrap_or_default()
        ),
    )
}

fn criterion_micro() -> Outcome {
    let g4 = GridShape::new(4, 4, 4, 1).unwrap();
    let tensor = |shape, pts: &[(i32, i32, i32)], feats: Vec<f32>| {
        SparseTensor::new(
            shape,
            VoxelIndices::from_coords(pts.iter().map(|&(x, y, z)| VoxelCoord::new(0, x, y, z))),
            feats,
            1,
        )
        .unwrap()
    };
    let mut failures = Vec::new();

    // Two-point submanifold offset table and [2, 2] output.
    let two = tensor(g4, &[(1, 1, 1), (2, 1, 1)], vec![1.0, 1.0]);
    let lct = LocationTable::build(two.sites(), &LctConfig::default()).unwrap();
    let oft = build_subm_oft(two.sites(), &lct, 3).unwrap();
    let mut expected = vec![-1; 54];
    expected[13] = 0;
    expected[22] = 1;
    expected[27 + 13] = 1;
    expected[27 + 4] = 0;
    if oft.entries() != expected.as_slice() {
        failures.push("two-point offset table");
    }
    let ones27 = WeightTensor::new(1, 1, 27, vec![1.0; 27]).unwrap();
    for path in [ComputePath::Reference, ComputePath::Optimized] {
        if subm_conv(&two, &oft, &ones27, path).unwrap().features() != [2.0, 2.0] {
            failures.push("two-point submanifold output");
        }
    }

    // Three-point downsample: outputs [2, 1].
    let three = tensor(g4, &[(0, 0, 0), (1, 1, 1), (2, 0, 0)], vec![1.0; 3]);
    let s2 = StrideSpec::new(2).unwrap();
    let (dmap, doft) = build_downsample_oft(three.sites(), s2, &LctConfig::default()).unwrap();
    let ones8 = WeightTensor::new(1, 1, 8, vec![1.0; 8]).unwrap();
    let mut dexp = vec![-1; 16];
    dexp[0] = 0;
    dexp[7] = 1;
    dexp[8] = 2;
    if doft.entries() != dexp.as_slice() {
        failures.push("three-point downsample offset table");
    }
    for path in [ComputePath::Reference, ComputePath::Optimized] {
        if sparse_conv(&three, &dmap, &doft, &ones8, path).unwrap().features() != [2.0, 1.0] {
            failures.push("three-point downsample output");
        }
    }

    // Inverse: coarse [5, 7] -> fine [5, 5, 7].
    let coarse = tensor(GridShape::new(2, 2, 2, 1).unwrap(), &[(0, 0, 0), (1, 0, 0)], vec![5.0, 7.0]);
    let imap = build_inverse_map(three.sites(), coarse.sites(), s2, &LctConfig::default()).unwrap();
    for path in [ComputePath::Reference, ComputePath::Optimized] {
        if inverse_conv(&coarse, &imap, three.sites(), &ones8, path).unwrap().features() != [5.0, 5.0, 7.0] {
            failures.push("inverse output");
        }
    }

    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "two-point OFT, [2.0, 1.0] downsample and [5.0, 5.0, 7.0] inverse reproduced exactly".to_string()
        } else {
            format!("mismatched: {}", failures.join(", "))
        },
    )
}

fn criterion_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = tempfile::tempdir().unwrap();
    let mut exact = 0;
    for i in 0..1000u64 {
        let shape = GridShape::new(
            rng.gen_range(1..=12),
            rng.gen_range(1..=12),
            rng.gen_range(1..=12),
            rng.gen_range(1..=3),
        )
        .unwrap();
        let density = rng.gen_range(0.01..=1.0);
        let channels = rng.gen_range(0..=4);
        let t = random_sparse_tensor(40_000 + i, shape, density, channels).unwrap();
        let bytes = encode_tensor(&t);
        let ok = if i % 50 == 0 {
            let p = dir.path().join(format!("{i}.spt"));
            save_tensor(&p, &t).unwrap();
            std::fs::read(&p).unwrap() == bytes && load_tensor(&p).unwrap() == t
        } else {
            let back = decode_tensor(&bytes).unwrap();
            back == t && encode_tensor(&back) == bytes
        };
        exact += ok as usize;
    }

    let sample = SparseTensor::new(
        GridShape::new(4, 4, 4, 1).unwrap(),
        VoxelIndices::from_coords([VoxelCoord::new(0, 1, 1, 1), VoxelCoord::new(0, 2, 1, 1)]),
        vec![1.0, 2.0],
        1,
    )
    .unwrap();
    let good = encode_tensor(&sample);
    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"SPT2");
    let mut version = good.clone();
    version[4..8].copy_from_slice(&9u32.to_le_bytes());
    let mut dup = good.clone();
    dup[32 + 8 + 4..32 + 8 + 8].copy_from_slice(&1i32.to_le_bytes());
    let mut oob = good.clone();
    oob[32 + 8..32 + 12].copy_from_slice(&4i32.to_le_bytes());
    let rejections = [
        matches!(decode_tensor(&magic), Err(Error::BadMagic)),
        matches!(decode_tensor(&version), Err(Error::VersionUnsupported(9))),
        matches!(decode_tensor(&good[..good.len() - 3]), Err(Error::Truncated { .. })),
        matches!(decode_tensor(&good[..20]), Err(Error::Truncated { .. })),
        matches!(decode_tensor(&dup), Err(Error::InvariantViolation(_))),
        matches!(decode_tensor(&oob), Err(Error::InvariantViolation(_))),
    ];
    let rejected = rejections.iter().filter(|&&b| b).count();
    Outcome::new(
        exact == 1000 && rejected == rejections.len(),
        format!(
            "{exact}/1000 byte-exact round trips, {rejected}/{} malformed files rejected with the right class",
            rejections.len()
        ),
    )
}

fn criterion_bench() -> Outcome {
    let cfg = |path| BenchConfig {
        operator: BenchOperator::Submanifold { kernel: 3 },
        path,
        shape: GridShape::new(64, 64, 64, 1).unwrap(),
        density: 0.05,
        channels: 16,
        out_channels: 16,
        repeats: 20,
        seed: 0,
        lct: LctConfig::default(),
    };
    let reference = run_bench(&cfg(ComputePath::Reference)).unwrap();
    let optimized = run_bench(&cfg(ComputePath::Optimized)).unwrap();
    let schema_ok = [&reference, &optimized].iter().all(|r| {
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        BenchReport::validate_json(&v).is_ok()
    });
    let r = reference.stages.compute.median;
    let o = optimized.stages.compute.median;
    Outcome::new(
        schema_ok && o <= r,
        format!(
            "n={} compute median reference {:.2} ms, optimized {:.2} ms ({:.2}x), schema valid: {schema_ok}",
            optimized.n,
            r * 1e3,
            o * 1e3,
            r / o
        ),
    )
}

fn main() {
    let subm = subm_cases();
    let down = strided_cases();
    let inv = inverse_cases();

    let criteria: Vec<Criterion> = vec![
        ("1 submanifold oracle equivalence", Box::new(|| criterion_subm(&subm))),
        ("2 downsample oracle equivalence", Box::new(|| criterion_down(&down))),
        ("3 inverse convolution correctness", Box::new(|| criterion_inverse(&inv))),
        ("4 reference/optimized path equivalence", Box::new(|| criterion_paths(&subm, &down, &inv))),
        ("5 determinism across worker counts", Box::new(|| criterion_determinism(&subm, &down, &inv))),
        ("6 dense/hash backend equivalence", Box::new(|| criterion_backends(&subm, &down, &inv))),
        ("7 worked micro-examples", Box::new(criterion_micro)),
        ("8 format round trip and rejection", Box::new(criterion_format)),
        ("9 benchmark sanity", Box::new(criterion_bench)),
    ];

    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = run();
        let tag = if outcome.ok { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {name}: {}", outcome.detail);
        failed += (!outcome.ok) as usize;
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
