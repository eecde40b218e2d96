//! Hot-path benchmarks: expected block statistics, finite-key bound
//! evaluation, Monte Carlo block sampling, a full sweep point and an
//! end-to-end two-hop relay.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use qkdnet::keyrate::{secret_key_length, sweep, BlockCounts};
use qkdnet::kms::KmsNetwork;
use qkdnet::linkmodel::{expected_block, ChannelState, ProtocolParams};
use qkdnet::simnet::{sample_block, KeyDeposit};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::hint::black_box;

fn link_statistics(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let channel = ChannelState { loss_db: 10.0 };
    c.bench_function("expected_block/10db", |b| {
        b.iter(|| expected_block(black_box(&params), black_box(&channel)).unwrap());
    });
}

fn finite_key_bounds(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let stats = expected_block(&params, &ChannelState { loss_db: 10.0 }).unwrap();
    let counts = BlockCounts::from_expected(&params, &stats);
    c.bench_function("secret_key_length/10db", |b| {
        b.iter(|| secret_key_length(black_box(&counts)).unwrap());
    });
}

fn block_sampling(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let expected = expected_block(&params, &ChannelState { loss_db: 10.0 }).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    c.bench_function("sample_block/10db", |b| {
        b.iter(|| sample_block(black_box(&params), black_box(&expected), &mut rng));
    });
}

fn sweep_point(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let grid = [10.0];
    c.bench_function("sweep/single_point", |b| {
        b.iter(|| sweep(black_box(&params), black_box(&grid)).unwrap());
    });
}

fn two_hop_relay(c: &mut Criterion) {
    let ring: Vec<String> = ["N1", "N2", "N3", "N4"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    // Stores keep consumed blocks as history, so each measured request gets
    // a freshly stocked network instead of an ever-longer block queue.
    let stocked = || {
        let mut net = KmsNetwork::with_ring(ring.clone(), 3);
        for i in 0..ring.len() {
            net.ingest(&KeyDeposit {
                link_id: format!("hop-{i}"),
                tx_node: ring[i].clone(),
                rx_node: ring[(i + 1) % ring.len()].clone(),
                block_index: 0,
                secret_bits: 1 << 20,
                material_seed: 1 + i as u64,
            })
            .unwrap();
        }
        net
    };
    c.bench_function("request_key/two_hops_256bit", |b| {
        b.iter_batched_ref(
            stocked,
            |net| net.request_key(black_box("N1"), black_box("N3"), 256).unwrap(),
            BatchSize::SmallInput,
        );
    });
}

criterion_group!(
    benches,
    link_statistics,
    finite_key_bounds,
    block_sampling,
    sweep_point,
    two_hop_relay
);
criterion_main!(benches);
