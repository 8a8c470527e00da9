#![no_main]

use cgg_core::preprocess::{parse_edge_list, SensorGraph};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(edges) = parse_edge_list(text) else { return };
    // building the graph may still reject (range, self-loops); when it
    // accepts, the edge set must be canonical and stable under rebuild
    if let Ok(graph) = SensorGraph::from_edges(8, edges) {
        for &(a, b) in graph.edges() {
            assert!(a < b && b < 8);
        }
        for i in 0..8 {
            let n = graph.neighbors(i);
            assert!(n.windows(2).all(|w| w[0] < w[1]), "neighbors sorted, deduped");
            assert!(n.iter().all(|&j| j < 8 && j != i));
        }
        let rebuilt = SensorGraph::from_edges(8, graph.edges().to_vec()).expect("rebuild");
        assert_eq!(graph, rebuilt);
    }
});
