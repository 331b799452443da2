use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::graph::EGraph;
use super::pattern::{Rewrite, SearchCtx};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub rounds: usize,
    pub max_nodes: usize,
    #[serde(with = "secs")]
    pub time: Duration,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { rounds: 8, max_nodes: 50_000, time: Duration::from_secs(5) }
    }
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Saturated,
    Rounds,
    Nodes,
    Time,
}

#[derive(Clone, Debug, Serialize)]
pub struct SaturationReport {
    pub rounds: usize,
    pub nodes: usize,
    pub classes: usize,
    pub stop: StopReason,
    pub fired: BTreeMap<String, usize>,
    pub refused_merges: usize,
    pub elapsed: Duration,
}

/// Runs rounds of search-then-apply until nothing changes or the budget runs
/// out. After each round the graph is rebuilt and float classes are valued.
pub fn saturate(g: &mut EGraph, rules: &[Arc<dyn Rewrite>], budget: &Budget, eps_cond: f64) -> SaturationReport {
    let start = Instant::now();
    let ctx = SearchCtx { eps_cond, deadline: Some(start + budget.time), max_nodes: budget.max_nodes };
    let mut fired: BTreeMap<String, usize> = BTreeMap::new();
    g.rebuild();
    g.compute_values();
    let mut stop = StopReason::Rounds;
    let mut rounds = 0;
    'outer: while rounds < budget.rounds {
        rounds += 1;
        let before = g.version;
        let mut found = Vec::with_capacity(rules.len());
        for r in rules {
            if ctx.exhausted(g) {
                stop = if g.num_nodes() >= budget.max_nodes { StopReason::Nodes } else { StopReason::Time };
                break 'outer;
            }
            found.push(r.search(g, &ctx));
        }
        for (r, ms) in rules.iter().zip(found) {
            for (i, m) in ms.iter().enumerate() {
                if i % 64 == 0 && ctx.exhausted(g) {
                    g.rebuild();
                    g.compute_values();
                    stop = if g.num_nodes() >= budget.max_nodes { StopReason::Nodes } else { StopReason::Time };
                    break 'outer;
                }
                let v = g.version;
                r.apply(g, m, &ctx);
                if g.version != v {
                    *fired.entry(r.name().to_string()).or_default() += 1;
                }
            }
        }
        g.rebuild();
        g.compute_values();
        if g.version == before {
            stop = StopReason::Saturated;
            break;
        }
    }
    SaturationReport {
        rounds,
        nodes: g.num_nodes(),
        classes: g.num_classes(),
        stop,
        fired,
        refused_merges: g.refused_merges,
        elapsed: start.elapsed(),
    }
}
