use std::collections::VecDeque;

use dynopt::bench::{self, generate_graph, manylaunch_sizes, Graph, GraphKind, BFS, MANYLAUNCH, SSSP, SSSP_INF};
use dynopt::passes::{Threshold, ThresholdConfig};
use dynopt::pipeline::PassConfig;
use dynopt::sim::SimConfig;

fn levels(g: &Graph) -> Vec<i32> {
    let mut d = vec![-1; g.vertices()];
    let mut q = VecDeque::from([0usize]);
    d[0] = 0;
    while let Some(v) = q.pop_front() {
        for &u in g.neighbors(v) {
            if d[u as usize] < 0 {
                d[u as usize] = d[v] + 1;
                q.push_back(u as usize);
            }
        }
    }
    d
}

fn bellman_ford(g: &Graph) -> Vec<i32> {
    let n = g.vertices();
    let mut d = vec![SSSP_INF; n];
    d[0] = 0;
    for _ in 0..n {
        let mut changed = false;
        for v in 0..n {
            if d[v] == SSSP_INF {
                continue;
            }
            for e in g.row[v] as usize..g.row[v + 1] as usize {
                let u = g.col[e] as usize;
                if d[v] + g.weight[e] < d[u] {
                    d[u] = d[v] + g.weight[e];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

fn run(b: bench::Benchmark, spec: &str, cfg: &PassConfig) -> dynopt::sim::SimReport {
    let ds = b.dataset(&spec.parse().unwrap()).unwrap();
    b.run_variant(&ds, cfg, &SimConfig::default()).unwrap()
}

#[test]
fn hand_graph_bfs_distances() {
    let r = run(BFS, "hand", &PassConfig::default());
    assert_eq!(r.i32_buffer("dist").unwrap(), [0, 1, 1, 2, 2, 2, 3, 3, 4, -1]);
}

#[test]
fn generated_graphs_match_host_traversals() {
    for (kind, spec) in [(GraphKind::PowerLaw, "powerlaw:600:seed4"), (GraphKind::Road, "road:600:seed4")] {
        let g = generate_graph(kind, 600, 4);
        assert_eq!(run(BFS, spec, &PassConfig::default()).i32_buffer("dist").unwrap(), levels(&g));
        assert_eq!(run(SSSP, spec, &PassConfig::default()).i32_buffer("dist").unwrap(), bellman_ford(&g));
    }
}

#[test]
fn unit_weight_paths_equal_levels() {
    let mut g = generate_graph(GraphKind::Road, 400, 2);
    g.weight = vec![1; g.edges()];
    let ds = bench::graph_dataset(&g, true);
    let r = SSSP.run_variant(&ds, &PassConfig::default(), &SimConfig::default()).unwrap();
    let want: Vec<i32> = levels(&g).into_iter().map(|l| if l < 0 { SSSP_INF } else { l }).collect();
    assert_eq!(r.i32_buffer("dist").unwrap(), want);
}

#[test]
fn threshold_keeps_only_large_children_launching() {
    let cfg = PassConfig {
        threshold: Some(ThresholdConfig::new(Threshold::Value(32))),
        ..PassConfig::default()
    };
    let r = run(MANYLAUNCH, "manylaunch:1024:seed3", &cfg);
    let large = manylaunch_sizes(1024, 3).into_iter().filter(|&s| s >= 32).count() as u64;
    assert!(large > 50);
    assert_eq!(r.num_launches, large);
}

#[test]
fn manylaunch_sizes_follow_the_mix() {
    let s = manylaunch_sizes(5000, 1);
    let large = s.iter().filter(|&&x| x >= 256).count();
    assert!(s.iter().all(|&x| (0..32).contains(&x) || (256..=1024).contains(&x)));
    assert!((400..600).contains(&large), "{large}");
}

#[test]
fn dataset_specs_round_trip() {
    for s in ["hand", "powerlaw:100:seed2", "road:50:seed0", "manylaunch:64:seed7"] {
        let spec: bench::DatasetSpec = s.parse().unwrap();
        assert_eq!(spec.to_string(), s);
    }
    assert!("cube:3".parse::<bench::DatasetSpec>().is_err());
    assert!(BFS.dataset(&"manylaunch:4:seed1".parse().unwrap()).is_err());
}
