//! Hot-path timings for the protection stack: register ECC, local-memory
//! checksum verification, the decoupled shield, and one full simulated
//! trial. These are throughput baselines, not acceptance gates.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use guardsim_core::campaign::prepare_workload;
use guardsim_core::{
    gemm, protection_mask, secded_decode, secded_encode, shield_checksums, ArrayFaults,
    ArrayGeometry, Block, CampaignConfig, DType, Dataflow, ElemKind, FaultPlan, GuardedMemory,
    Protection, ProtectionConfig,
};

fn random_data_block(rng: &mut ChaCha8Rng, n: usize) -> Block {
    let mut b = Block::zeroed(n, n, ElemKind::Data(DType::Int8));
    for r in 0..n {
        for c in 0..n {
            b.set_i32(r, c, rng.random_range(-128..128)).unwrap();
        }
    }
    b
}

fn random_acc_block(rng: &mut ChaCha8Rng, n: usize) -> Block {
    let mut b = Block::zeroed(n, n, ElemKind::Acc(DType::Int8));
    for r in 0..n {
        for c in 0..n {
            b.set_i32(r, c, rng.random_range(-1000..1000)).unwrap();
        }
    }
    b
}

fn bench_ecc(c: &mut Criterion) {
    let mut g = c.benchmark_group("ecc");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let words: Vec<u64> = (0..256).map(|_| rng.random::<u64>() >> 32).collect();
    g.bench_function("encode_alpha32", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % words.len();
            black_box(secded_encode(words[i], 32).unwrap())
        })
    });
    g.bench_function("decode_clean_alpha32", |b| {
        let cw = secded_encode(words[0], 32).unwrap();
        b.iter(|| black_box(secded_decode(black_box(&cw))))
    });
    g.bench_function("decode_single_flip_alpha32", |b| {
        let mut cw = secded_encode(words[0], 32).unwrap();
        cw.flip(13);
        b.iter(|| black_box(secded_decode(black_box(&cw))))
    });
    g.finish();
}

fn bench_memory(c: &mut Criterion) {
    let mut g = c.benchmark_group("memory");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 16;
    let mask = protection_mask(DType::Int8, Protection::Full).unwrap().mask;
    let block = random_data_block(&mut rng, n);

    g.bench_function("mvin_16x16", |b| {
        b.iter_batched(
            || (GuardedMemory::new(n * n), block.clone()),
            |(mut mem, blk)| mem.mvin(0, blk, mask, None).unwrap(),
            BatchSize::SmallInput,
        )
    });

    let mut mem = GuardedMemory::new(n * n);
    mem.mvin(0, block.clone(), mask, None).unwrap();
    g.bench_function("verify_clean_16x16", |b| {
        b.iter(|| black_box(mem.verify_and_correct(0).unwrap()))
    });
    g.bench_function("verify_one_flip_16x16", |b| {
        b.iter(|| {
            mem.corrupt_data(0, 5, 9, |w| w ^ 0x10).unwrap();
            black_box(mem.verify_and_correct(0).unwrap())
        })
    });
    g.finish();
}

fn bench_shield(c: &mut Criterion) {
    let mut g = c.benchmark_group("shield");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 16;
    let geometry = ArrayGeometry::new(16, 1, Dataflow::WS).unwrap();
    let a = random_data_block(&mut rng, n);
    let bb = random_data_block(&mut rng, n);
    let d = random_acc_block(&mut rng, n);

    g.bench_function("gemm_16x16_int8", |b| {
        b.iter(|| black_box(gemm(&a, &bb, &d, &geometry, &ArrayFaults::default()).unwrap()))
    });
    g.bench_function("checksums_16x16_int8", |b| {
        b.iter(|| black_box(shield_checksums(&a, &bb, &d).unwrap()))
    });
    g.finish();
}

fn bench_trial(c: &mut Criterion) {
    let mut g = c.benchmark_group("trial");
    g.sample_size(20);
    let config = CampaignConfig::default();
    let prep = prepare_workload(&config).unwrap();
    let plan = FaultPlan::default();
    g.bench_function("classifier_trial_protected_fault_free", |b| {
        b.iter(|| black_box(guardsim_core::run_trial(&prep, &config.protection, &plan, 0).unwrap()))
    });
    g.bench_function("classifier_trial_unprotected_fault_free", |b| {
        let off = ProtectionConfig::none();
        b.iter(|| black_box(guardsim_core::run_trial(&prep, &off, &plan, 0).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench_ecc, bench_memory, bench_shield, bench_trial);
criterion_main!(benches);
