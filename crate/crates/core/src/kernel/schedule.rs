use std::collections::BTreeSet;

use super::app::{AppConfig, BlockId, KernelError};

/// Topological order over undelayed channels. Among ready blocks the one
/// declared first runs first, so the result is the lexicographically
/// smallest valid order by declaration index.
pub fn schedule_order(app: &AppConfig) -> Result<Vec<BlockId>, KernelError> {
    let n = app.block_count();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for ch in app.channels().iter().filter(|c| !c.delayed) {
        let (s, d) = (ch.source.block.0, ch.sink.block.0);
        succ[s].push(d);
        indegree[d] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(next) = ready.pop_first() {
        order.push(BlockId(next));
        for &d in &succ[next] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| app.block_name(BlockId(i)).to_owned())
            .collect();
        return Err(KernelError::CyclicDependency(stuck));
    }
    Ok(order)
}
