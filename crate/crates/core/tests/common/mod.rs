//! Reference implementations used as independent oracles by the integration
//! and acceptance tests. They work from the raw triplet list with plain
//! loops and share no code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use kgh_core::embed::EmbeddingProvider;
use kgh_core::{EntityId, GraphBuilder, KnowledgeGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random multigraph with `n_entities` named nodes and `n_triplets`
/// edges over three relations. Self-loops and parallel edges occur.
pub fn random_graph(seed: u64, n_entities: usize, n_triplets: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    for _ in 0..n_triplets {
        let h = rng.gen_range(0..n_entities);
        let t = rng.gen_range(0..n_entities);
        let r = rng.gen_range(0..3);
        b.triplet(&format!("node {h}"), &format!("rel{r}"), &format!("node {t}"));
    }
    b.build()
}

/// K(v) by scanning every triplet for every entity.
pub fn brute_k(g: &KnowledgeGraph, labels: &BTreeMap<usize, u8>) -> BTreeMap<EntityId, f64> {
    let mut out = BTreeMap::new();
    for v in g.entities() {
        let mut sum = 0u64;
        let mut n = 0u64;
        for (i, t) in g.triplets().iter().enumerate() {
            if t.head == v || t.tail == v {
                if let Some(&y) = labels.get(&i) {
                    sum += u64::from(y);
                    n += 1;
                }
            }
        }
        if n > 0 {
            out.insert(v, sum as f64 / n as f64);
        }
    }
    out
}

/// Distinct neighbors of `v`, found by scanning triplets.
pub fn brute_neighbors(g: &KnowledgeGraph, v: EntityId) -> BTreeSet<EntityId> {
    let mut set = BTreeSet::new();
    for t in g.triplets() {
        if t.head == v {
            set.insert(t.tail);
        }
        if t.tail == v {
            set.insert(t.head);
        }
    }
    set
}

/// H(v) for every scored entity with at least one scored neighbor.
pub fn brute_h(g: &KnowledgeGraph, k: &BTreeMap<EntityId, f64>) -> BTreeMap<EntityId, f64> {
    let mut out = BTreeMap::new();
    for (&v, &kv) in k {
        let peers: Vec<f64> = brute_neighbors(g, v).iter().filter_map(|u| k.get(u).copied()).collect();
        if !peers.is_empty() {
            let d: f64 = peers.iter().map(|ku| (kv - ku).abs()).sum::<f64>();
            out.insert(v, 1.0 - d / peers.len() as f64);
        }
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Every simple walk of exactly `hops` edges from `start`, scored as the
/// product of per-hop scores. Returned best first, ties by edge list.
pub fn brute_paths(
    g: &KnowledgeGraph,
    start: EntityId,
    hops: usize,
    question: &str,
    provider: &dyn EmbeddingProvider,
    k: Option<(&BTreeMap<EntityId, f64>, f64)>,
) -> Vec<(Vec<usize>, f64)> {
    let q = provider.embed(question).unwrap();
    let hop = |idx: usize, u: EntityId| {
        let t = &g.triplets()[idx];
        let text = format!("{} {}", g.relation_label(t.relation), g.entity_label(u));
        let c = cosine(&provider.embed(&text).unwrap(), &q).clamp(-1.0, 1.0);
        let s = (1.0 + c) / 2.0;
        match k {
            Some((ks, alpha)) => s * (1.0 - alpha * ks.get(&u).copied().unwrap_or(0.5)),
            None => s,
        }
    };
    let mut out = Vec::new();
    let mut stack = vec![(vec![start], Vec::<usize>::new(), 1.0)];
    while let Some((nodes, edges, score)) = stack.pop() {
        if edges.len() == hops {
            out.push((edges, score));
            continue;
        }
        let end = *nodes.last().unwrap();
        for (idx, t) in g.triplets().iter().enumerate() {
            let u = if t.head == end {
                t.tail
            } else if t.tail == end {
                t.head
            } else {
                continue;
            };
            if nodes.contains(&u) {
                continue;
            }
            let mut n2 = nodes.clone();
            n2.push(u);
            let mut e2 = edges.clone();
            e2.push(idx);
            stack.push((n2, e2, score * hop(idx, u)));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Checks a selection plan and holdout against their definitions by direct
/// scanning. Returns a description of the first violation found.
pub fn check_plan(
    g: &KnowledgeGraph,
    plan: &kgh_core::injection::SelectionPlan,
    total: usize,
    anchor_fraction: f64,
    holdout: &[usize],
    holdout_fraction: f64,
) -> Result<(), String> {
    let m = g.num_triplets();
    let quota = (anchor_fraction * total as f64 - 1e-9).ceil() as usize;
    let a = &plan.anchors.triplets;
    if a.len() != quota {
        return Err(format!("{} anchors, quota {quota}", a.len()));
    }
    if a.len() + plan.selected.len() != total {
        return Err(format!("{} + {} != budget {total}", a.len(), plan.selected.len()));
    }
    let mut seen = BTreeSet::new();
    for &i in a.iter().chain(&plan.selected) {
        if i >= m || !seen.insert(i) {
            return Err(format!("triplet {i} out of range or repeated"));
        }
    }
    // anchors are whole neighborhoods of the listed entities, except a
    // load-order prefix for the last one
    let ents = &plan.anchors.entities;
    let in_anchor: BTreeSet<usize> = a.iter().copied().collect();
    for &i in a {
        let t = &g.triplets()[i];
        if !ents.iter().any(|&v| t.head == v || t.tail == v) {
            return Err(format!("anchor {i} touches no anchor entity"));
        }
    }
    for (pos, &v) in ents.iter().enumerate() {
        let incident: Vec<usize> = (0..m).filter(|&i| g.triplets()[i].head == v || g.triplets()[i].tail == v).collect();
        if pos + 1 < ents.len() {
            if let Some(i) = incident.iter().find(|i| !in_anchor.contains(i)) {
                return Err(format!("entity {v} is missing incident triplet {i}"));
            }
        } else {
            // triplets an earlier entity did not already claim must be taken
            // as a prefix in load order
            let earlier = |i: usize| ents[..pos].iter().any(|&u| g.triplets()[i].head == u || g.triplets()[i].tail == u);
            let own: Vec<bool> = incident.iter().filter(|&&i| !earlier(i)).map(|i| in_anchor.contains(i)).collect();
            if own.windows(2).any(|w| !w[0] && w[1]) {
                return Err(format!("last anchor entity {v} is not a load-order prefix"));
            }
        }
    }
    let wanted = (holdout_fraction * m as f64 - 1e-9).ceil() as usize;
    if holdout.len() != wanted {
        return Err(format!("holdout has {} triplets, expected {wanted}", holdout.len()));
    }
    let mut plan_entities = BTreeSet::new();
    for &i in &seen {
        plan_entities.insert(g.triplets()[i].head);
        plan_entities.insert(g.triplets()[i].tail);
    }
    let mut hs = BTreeSet::new();
    for &i in holdout {
        let t = &g.triplets()[i];
        if !hs.insert(i) || seen.contains(&i) {
            return Err(format!("holdout triplet {i} repeated or in the plan"));
        }
        if plan_entities.contains(&t.head) || plan_entities.contains(&t.tail) {
            return Err(format!("holdout triplet {i} shares an entity with the plan"));
        }
    }
    Ok(())
}

/// Templates `{SUB} <relation> {OBJ}.` for every relation of `g`.
pub fn plain_templates(g: &KnowledgeGraph) -> kgh_core::oracle::TemplateTable {
    let mut t = kgh_core::oracle::TemplateTable::new();
    for r in 0..g.num_relations() as u32 {
        let rel = kgh_core::RelationId(r);
        let pattern = format!("{{SUB}} {} {{OBJ}}.", g.relation_label(rel));
        t.insert(kgh_core::oracle::RelationTemplate::new(rel, &pattern).unwrap());
    }
    t
}

/// What the search should return according to the level-fallback rule:
/// the walks of the deepest reachable level up to `hops`, none if the start
/// has no edges.
pub fn brute_expected(
    g: &KnowledgeGraph,
    start: EntityId,
    hops: usize,
    question: &str,
    provider: &dyn EmbeddingProvider,
    k: Option<(&BTreeMap<EntityId, f64>, f64)>,
) -> Vec<(Vec<usize>, f64)> {
    for h in (1..=hops).rev() {
        let paths = brute_paths(g, start, h, question, provider, k);
        if !paths.is_empty() {
            return paths;
        }
    }
    Vec::new()
}

/// Compares search output with brute-force walks: same walks, same scores
/// up to rounding, and non-increasing score order.
pub fn same_paths(got: &[kgh_core::retrieval::PathCandidate], want: &[(Vec<usize>, f64)]) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} paths, expected {}", got.len(), want.len()));
    }
    let mut a: Vec<(&Vec<usize>, f64)> = got.iter().map(|c| (&c.edges, c.score)).collect();
    let mut b: Vec<(&Vec<usize>, f64)> = want.iter().map(|(e, s)| (e, *s)).collect();
    a.sort_by(|x, y| x.0.cmp(y.0));
    b.sort_by(|x, y| x.0.cmp(y.0));
    for ((ea, sa), (eb, sb)) in a.iter().zip(&b) {
        if ea != eb {
            return Err(format!("walk {ea:?} vs {eb:?}"));
        }
        if (sa - sb).abs() > 1e-12 {
            return Err(format!("walk {ea:?}: score {sa} vs {sb}"));
        }
    }
    if got.windows(2).any(|w| w[1].score > w[0].score) {
        return Err("scores not in descending order".into());
    }
    Ok(())
}
