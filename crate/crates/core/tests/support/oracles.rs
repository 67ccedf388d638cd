//! Brute-force reference implementations shared by the property tests.
#![allow(dead_code)]

use chrono::{Datelike, Duration, NaiveDateTime, Timelike, Weekday};
use chrono_tz::Tz;
use nalgebra::Vector3;
use rand::Rng;
use ronda_core::schedule::Recurrence;
use ronda_core::{EdgeKey, MapEdit, Node, NodeId, NodeKind, Timestamp, TopologicalMap, TraversalAction};

/// Random directed graph with up to `max_nodes` nodes. Integer costs make
/// ties common; otherwise costs are real-valued.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize, integer_costs: bool) -> TopologicalMap {
    let n = rng.gen_range(2..=max_nodes);
    let mut map = TopologicalMap::new("map");
    for i in 0..n {
        let p = Vector3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), 0.0);
        map.insert_node(Node::new(format!("v{i}"), NodeKind::Waypoint, p)).unwrap();
    }
    let density: f64 = rng.gen_range(0.1..0.6);
    let mut inactive = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for action in [TraversalAction::Walk, TraversalAction::Door] {
                let p = if action == TraversalAction::Walk { density } else { density / 4.0 };
                if !rng.gen_bool(p) {
                    continue;
                }
                let cost = if integer_costs {
                    rng.gen_range(1..=6) as f64
                } else {
                    rng.gen_range(0.1..10.0)
                };
                let key = map
                    .insert_edge(&NodeId(format!("v{i}")), &NodeId(format!("v{j}")), action, Some(cost))
                    .unwrap();
                if rng.gen_bool(0.1) {
                    inactive.push(key);
                }
            }
        }
    }
    for key in inactive {
        map = ronda_core::apply_edit(&map, &MapEdit::SetEdgeActive { key, active: false }).unwrap().map;
    }
    map
}

/// Every simple path from `start` to `goal` over active edges, as
/// (left-to-right cost, edge keys).
pub fn simple_paths(map: &TopologicalMap, start: &NodeId, goal: &NodeId) -> Vec<(f64, Vec<EdgeKey>)> {
    fn walk(
        map: &TopologicalMap,
        at: &NodeId,
        goal: &NodeId,
        cost: f64,
        path: &mut Vec<EdgeKey>,
        seen: &mut Vec<NodeId>,
        out: &mut Vec<(f64, Vec<EdgeKey>)>,
    ) {
        if at == goal {
            out.push((cost, path.clone()));
            return;
        }
        for e in map.edges().filter(|e| e.active && &e.source == at) {
            if seen.contains(&e.target) {
                continue;
            }
            seen.push(e.target.clone());
            path.push(e.key());
            walk(map, &e.target, goal, cost + e.cost, path, seen, out);
            path.pop();
            seen.pop();
        }
    }
    let mut out = Vec::new();
    walk(map, start, goal, 0.0, &mut Vec::new(), &mut vec![start.clone()], &mut out);
    out
}

pub fn brute_force_cost(map: &TopologicalMap, start: &NodeId, goal: &NodeId) -> Option<f64> {
    simple_paths(map, start, goal).into_iter().map(|(c, _)| c).min_by(f64::total_cmp)
}

/// Cheapest path, ties to fewer hops then the smaller key sequence.
pub fn brute_force_route(map: &TopologicalMap, start: &NodeId, goal: &NodeId) -> Option<(f64, Vec<EdgeKey>)> {
    simple_paths(map, start, goal).into_iter().min_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.len().cmp(&b.1.len()))
            .then_with(|| a.1.cmp(&b.1))
    })
}

/// Minimum open-path cost over every permutation of `n` tasks.
pub fn brute_force_tsp(costs: &[Vec<f64>], n: usize) -> f64 {
    fn go(costs: &[Vec<f64>], at: usize, left: &mut Vec<usize>, acc: f64, best: &mut f64) {
        if left.is_empty() {
            *best = best.min(acc);
            return;
        }
        for i in 0..left.len() {
            let t = left.remove(i);
            go(costs, t + 1, left, acc + costs[at][t + 1], best);
            left.insert(i, t);
        }
    }
    let mut best = f64::INFINITY;
    go(costs, 0, &mut (0..n).collect(), 0.0, &mut best);
    best
}

fn targets_on(rec: &Recurrence, date: chrono::NaiveDate) -> Vec<NaiveDateTime> {
    match rec {
        Recurrence::DailyAt { times, weekdays_only } => {
            if *weekdays_only && matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
                return Vec::new();
            }
            times.iter().map(|t| date.and_time(t.0)).collect()
        }
        Recurrence::WeeklyAt { slots } => slots
            .iter()
            .filter(|s| s.weekday == date.weekday())
            .map(|s| date.and_time(s.time.0))
            .collect(),
        _ => Vec::new(),
    }
}

/// Walks UTC minute by minute. A minute fires when some wall-clock target
/// lies after every local reading seen so far and at or before the current
/// one, so skipped targets fire at the first minute past the gap and
/// repeated readings never fire twice. Handles daily and weekly rules.
pub fn minute_scan(rec: &Recurrence, from: Timestamp, until: Timestamp, tz: &Tz) -> Vec<Timestamp> {
    let mut out = Vec::new();
    let mut high = from.with_timezone(tz).naive_local();
    let mut m = from;
    while m < until {
        m += Duration::minutes(1);
        let local = m.with_timezone(tz).naive_local();
        if local > high {
            let mut d = high.date();
            let mut hit = false;
            while d <= local.date() {
                hit |= targets_on(rec, d).iter().any(|l| *l > high && *l <= local);
                d = d.succ_opt().unwrap();
            }
            if hit {
                out.push(m);
            }
            high = local;
        }
    }
    out
}

/// Minute scan for `Every`: the anchor floored to its local hour, then
/// every minute whose distance from it is a multiple of the period.
pub fn minute_scan_every(period_s: u64, anchor: Timestamp, from: Timestamp, until: Timestamp, tz: &Tz) -> Vec<Timestamp> {
    let local = anchor.with_timezone(tz).naive_local();
    let into_hour = local - local.date().and_hms_opt(local.hour(), 0, 0).unwrap();
    let base = anchor - into_hour;
    let mut out = Vec::new();
    let mut m = from;
    while m < until {
        m += Duration::minutes(1);
        let since = (m - base).num_seconds();
        if since >= 0 && since % period_s as i64 == 0 {
            out.push(m);
        }
    }
    out
}
