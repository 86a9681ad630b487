//! Simulated federation: client population, cohort sampling and a
//! sum-only aggregation boundary.
//!
//! Clients turn their record into a [`ClientStatsPacket`]; the server side
//! only ever sees the element-wise sum of a cohort's packets, wrapped in an
//! [`AggregateReport`]. No cryptography is involved; the boundary is the
//! type signature.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClientRecord;
use crate::sampling::RngHandle;

/// The federated client population.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPopulation {
    clients: Vec<ClientRecord>,
}

impl ClientPopulation {
    pub fn new(clients: Vec<ClientRecord>) -> Result<Self> {
        let Some(first) = clients.first() else {
            return Err(Error::contract("client population is empty"));
        };
        let c = first.num_categories();
        if let Some((i, bad)) = clients
            .iter()
            .enumerate()
            .find(|(_, r)| r.num_categories() != c)
        {
            return Err(Error::contract(format!(
                "client {i} has {} categories, client 0 has {c}",
                bad.num_categories()
            )));
        }
        Ok(ClientPopulation { clients })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn get(&self, i: usize) -> &ClientRecord {
        &self.clients[i]
    }

    pub fn records(&self) -> &[ClientRecord] {
        &self.clients
    }

    pub fn num_categories(&self) -> usize {
        self.clients[0].num_categories()
    }

    /// Largest sample count held by any client.
    pub fn max_n(&self) -> u32 {
        self.clients.iter().map(ClientRecord::n).max().unwrap_or(0)
    }

    /// Sub-population of the given clients, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let picked = indices
            .iter()
            .map(|&i| {
                self.clients
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::contract(format!("client index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        ClientPopulation::new(picked)
    }

    /// Column sums of all client histograms.
    pub fn aggregate_histogram(&self) -> Vec<u64> {
        let mut total = vec![0u64; self.num_categories()];
        for rec in &self.clients {
            for (t, &x) in total.iter_mut().zip(rec.counts()) {
                *t += x as u64;
            }
        }
        total
    }

    /// One `{"c":[...],"n":...}` object per line; blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut clients = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClientRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                location: format!("line {}", lineno + 1),
                message: e.to_string(),
            })?;
            clients.push(rec);
        }
        ClientPopulation::new(clients)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for rec in &self.clients {
            serde_json::to_writer(&mut writer, rec)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Uniform cohort of `cohort_size` distinct clients, sorted ascending.
pub fn sample_cohort(
    pop: &ClientPopulation,
    cohort_size: usize,
    rng: RngHandle,
) -> Result<Vec<usize>> {
    sample_indices(pop.len(), cohort_size, rng)
}

pub(crate) fn sample_indices(m: usize, size: usize, rng: RngHandle) -> Result<Vec<usize>> {
    if size == 0 || size > m {
        return Err(Error::contract(format!(
            "cohort size {size} must be in 1..={m}"
        )));
    }
    if size == m {
        return Ok((0..m).collect());
    }
    let mut picked = rand::seq::index::sample(&mut rng.rng(), m, size).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Sparse K×N matrix stored by column: sample count → length-K vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CountColumns {
    k: usize,
    columns: BTreeMap<u32, Vec<f64>>,
}

impl CountColumns {
    pub fn new(k: usize) -> Self {
        CountColumns {
            k,
            columns: BTreeMap::new(),
        }
    }

    /// Matrix whose only nonzero column is `n`, holding `values`.
    pub fn single_column(n: u32, values: Vec<f64>) -> Self {
        CountColumns {
            k: values.len(),
            columns: BTreeMap::from([(n, values)]),
        }
    }

    pub fn rows(&self) -> usize {
        self.k
    }

    pub fn get(&self, k: usize, n: u32) -> f64 {
        self.columns.get(&n).map_or(0.0, |col| col[k])
    }

    pub fn columns(&self) -> impl Iterator<Item = (u32, &[f64])> + '_ {
        self.columns.iter().map(|(&n, col)| (n, col.as_slice()))
    }

    /// Row `k` as a sparse map over sample counts.
    pub fn row(&self, k: usize) -> BTreeMap<u32, f64> {
        self.columns.iter().map(|(&n, col)| (n, col[k])).collect()
    }

    pub fn row_sum(&self, k: usize) -> f64 {
        self.columns.values().map(|col| col[k]).sum()
    }

    fn add_assign(&mut self, other: &CountColumns) -> Result<()> {
        if self.k != other.k {
            return Err(Error::contract(format!(
                "count matrices have {} and {} rows",
                self.k, other.k
            )));
        }
        for (&n, col) in &other.columns {
            let dst = self
                .columns
                .entry(n)
                .or_insert_with(|| vec![0.0; col.len()]);
            for (d, s) in dst.iter_mut().zip(col) {
                *d += s;
            }
        }
        Ok(())
    }
}

fn add_matrix(dst: &mut [Vec<f64>], src: &[Vec<f64>]) -> Result<()> {
    if dst.len() != src.len() || dst.iter().zip(src).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::contract("statistic matrices differ in shape"));
    }
    for (drow, srow) in dst.iter_mut().zip(src) {
        add_vec(drow, srow)?;
    }
    Ok(())
}

fn add_vec(dst: &mut [f64], src: &[f64]) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::contract("statistic vectors differ in length"));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
    Ok(())
}

/// Initialization-round statistics: sample-count indicator `e` and first
/// and second moments `p`, `q` of the normalized histogram, each placed in
/// the row of the client's randomly chosen component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitStats {
    pub e: CountColumns,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

/// EM-round statistics: responsibilities `omega`, soft sample-count
/// assignment `e`, digamma numerators `u` and denominators `v`. `weight` is
/// 1 for a contributing client and 0 for one that sat the round out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmStats {
    pub omega: Vec<f64>,
    pub e: CountColumns,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub weight: f64,
}

impl EmStats {
    /// Packet of a client that does not contribute this round.
    pub fn zero(k: usize, c: usize) -> Self {
        EmStats {
            omega: vec![0.0; k],
            e: CountColumns::new(k),
            u: vec![vec![0.0; c]; k],
            v: vec![0.0; k],
            weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClientStatsPacket {
    Init(InitStats),
    Em(EmStats),
}

impl ClientStatsPacket {
    fn add_assign(&mut self, other: &ClientStatsPacket) -> Result<()> {
        match (self, other) {
            (ClientStatsPacket::Init(a), ClientStatsPacket::Init(b)) => {
                a.e.add_assign(&b.e)?;
                add_matrix(&mut a.p, &b.p)?;
                add_matrix(&mut a.q, &b.q)
            }
            (ClientStatsPacket::Em(a), ClientStatsPacket::Em(b)) => {
                add_vec(&mut a.omega, &b.omega)?;
                a.e.add_assign(&b.e)?;
                add_matrix(&mut a.u, &b.u)?;
                add_vec(&mut a.v, &b.v)?;
                a.weight += b.weight;
                Ok(())
            }
            _ => Err(Error::contract("cannot sum init and EM packets together")),
        }
    }
}

/// Element-wise sum of a cohort's packets. This is all the server sees.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    stats: ClientStatsPacket,
    cohort_size: usize,
}

impl AggregateReport {
    pub fn cohort_size(&self) -> usize {
        self.cohort_size
    }

    pub fn stats(&self) -> &ClientStatsPacket {
        &self.stats
    }

    pub fn as_init(&self) -> Option<&InitStats> {
        match &self.stats {
            ClientStatsPacket::Init(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_em(&self) -> Option<&EmStats> {
        match &self.stats {
            ClientStatsPacket::Em(s) => Some(s),
            _ => None,
        }
    }

    fn merge(mut self, other: AggregateReport) -> Result<AggregateReport> {
        self.stats.add_assign(&other.stats)?;
        self.cohort_size += other.cohort_size;
        Ok(self)
    }
}

/// Sum packets in the order given.
pub fn secure_sum(packets: &[ClientStatsPacket]) -> Result<AggregateReport> {
    let (first, rest) = packets
        .split_first()
        .ok_or_else(|| Error::contract("secure sum over an empty cohort"))?;
    let mut stats = first.clone();
    for p in rest {
        stats.add_assign(p)?;
    }
    Ok(AggregateReport {
        stats,
        cohort_size: packets.len(),
    })
}

/// How a round's packets are reduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Packets are summed in ascending client order; bit-reproducible.
    #[default]
    Deterministic,
    /// Tree reduction in whatever association the worker pool picks.
    Parallel,
}

/// Run one protocol round: every cohort member computes its packet from its
/// own record, and the server receives only the aggregate.
pub fn run_round<F>(
    pop: &ClientPopulation,
    cohort: &[usize],
    execution: Execution,
    client_step: F,
) -> Result<AggregateReport>
where
    F: Fn(usize, &ClientRecord) -> Result<ClientStatsPacket> + Sync,
{
    if let Some(&bad) = cohort.iter().find(|&&i| i >= pop.len()) {
        return Err(Error::contract(format!("cohort member {bad} out of range")));
    }
    match execution {
        Execution::Deterministic => {
            let packets = cohort
                .par_iter()
                .map(|&i| client_step(i, pop.get(i)))
                .collect::<Result<Vec<_>>>()?;
            secure_sum(&packets)
        }
        Execution::Parallel => cohort
            .par_iter()
            .map(|&i| {
                let packet = client_step(i, pop.get(i))?;
                Ok(AggregateReport {
                    stats: packet,
                    cohort_size: 1,
                })
            })
            .try_reduce_with(|a, b| a.merge(b))
            .unwrap_or_else(|| Err(Error::contract("secure sum over an empty cohort"))),
    }
}
