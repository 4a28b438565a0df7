use dynopt::lang::{parse, print};
use dynopt::passes::{AggConfig, AggGranularity, CoarsenConfig};
use dynopt::pipeline::{run_pipeline, PassConfig};
use dynopt::sim::{simulate, Dataset, SimConfig};

const FOUR_PARENTS: &str = "
global int gd[4];
global int hits[4];

kernel c(int p) {
    if (threadIdx.x == 0) {
        atomicAdd(hits[p], 1);
    }
}

kernel par() {
    int p = threadIdx.x;
    launch c<<<gd[p], 32>>>(p);
}

host main() {
    launch par<<<1, 4>>>();
    sync;
}
";

#[test]
fn fused_counter_scans_participating_launches() {
    let cfg = PassConfig {
        aggregate: Some(AggConfig {
            granularity: AggGranularity::Grid,
            group_size: 4,
            agg_threshold: 0,
        }),
        ..PassConfig::default()
    };
    let prog = run_pipeline(&parse(FOUR_PARENTS).unwrap(), &cfg).unwrap().program;
    let ds = Dataset::new().with_i32("gd", vec![4, 0, 6, 5]);
    let r = simulate(&prog, Some(&ds), &SimConfig::default()).unwrap();
    assert_eq!(r.i32_buffer("hits").unwrap(), [4, 0, 6, 5]);
    // Three rows for parents 0, 2 and 3, scanning to 0, 4, 10.
    assert_eq!(r.i32_buffer("_agg_c_args0").unwrap()[..3], [0, 2, 3]);
    assert_eq!(r.i32_buffer("_agg_c_gdim").unwrap()[..3], [0, 4, 10]);
    assert_eq!(r.i64_buffer("_agg_c_ctr").unwrap(), [(3i64 << 32) | 15]);
    // One parent block, then one aggregated grid of 15 blocks from the host.
    assert_eq!((r.num_launches, r.host_launches, r.blocks_scheduled), (0, 2, 16));
}

#[test]
fn coarsened_blocks_take_contiguous_chunks() {
    let src = "
global int seen[16];
global int chunk[4];

kernel child(int n) {
    if (threadIdx.x == 0) {
        atomicAdd(seen[blockIdx.x], 1);
    }
}

kernel parent() {
    launch child<<<10, 32>>>(10);
}

host main() {
    launch parent<<<1, 1>>>();
    sync;
}
";
    let cfg = PassConfig {
        coarsen: Some(CoarsenConfig::new(4).unwrap()),
        ..PassConfig::default()
    };
    let text = print(&run_pipeline(&parse(src).unwrap(), &cfg).unwrap().program);
    // Count loop iterations per physical block.
    let instrumented = text.replacen(
        "_b = _b + 1) {\n",
        "_b = _b + 1) {\nif (threadIdx.x == 0) { atomicAdd(chunk[blockIdx.x], 1); }\n",
        1,
    );
    assert_ne!(instrumented, text);
    let r = simulate(&parse(&instrumented).unwrap(), None, &SimConfig::default()).unwrap();
    assert_eq!(r.i32_buffer("chunk").unwrap(), [4, 4, 2, 0]);
    assert_eq!(&r.i32_buffer("seen").unwrap()[..11], [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0]);
    assert_eq!(r.blocks_scheduled, 1 + 3);
}

#[test]
fn empty_launches_are_not_counted() {
    let ds = Dataset::new().with_i32("gd", vec![0, 0, 2, 0]);
    let r = simulate(&parse(FOUR_PARENTS).unwrap(), Some(&ds), &SimConfig::default()).unwrap();
    assert_eq!(r.num_launches, 1);
    assert_eq!(r.blocks_scheduled, 1 + 2);
}

#[test]
fn runs_are_reproducible_and_seeds_reorder_only_scheduling() {
    let ds = Dataset::new().with_i32("gd", vec![3, 1, 2, 7]);
    let p = parse(FOUR_PARENTS).unwrap();
    let a = simulate(&p, Some(&ds), &SimConfig::default()).unwrap();
    let b = simulate(&p, Some(&ds), &SimConfig::default()).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let seeded = SimConfig {
        seed: Some(9),
        ..SimConfig::default()
    };
    let c = simulate(&p, Some(&ds), &seeded).unwrap();
    assert_eq!(a.memory_digest(), c.memory_digest());
}

#[test]
fn out_of_bounds_access_traps() {
    let src = "global int a[2];\nkernel k() { a[threadIdx.x] = 1; }\nhost main() { launch k<<<1, 4>>>(); sync; }";
    let err = simulate(&parse(src).unwrap(), None, &SimConfig::default()).unwrap_err();
    assert!(err.to_string().contains("bounds"), "{err}");
}

#[test]
fn launch_costs_dominate_tiny_children() {
    let ds = Dataset::new().with_i32("gd", vec![1, 1, 1, 1]);
    let r = simulate(&parse(FOUR_PARENTS).unwrap(), Some(&ds), &SimConfig::default()).unwrap();
    // Four queued device launches: latency plus serialized service.
    assert!(r.makespan >= 500 + 4 * 100, "{}", r.makespan);
}
