//! Turning a central row pool into simulated federated clients.
//!
//! Plans reference pool rows by index. Within a client, rows of a category
//! are drawn without replacement; across clients rows may repeat. When a
//! bucket is too small for a client's target count, that category falls
//! back to sampling with replacement and the client records the fact.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::ClientPopulation;
use crate::ingest::CentralPool;
use crate::json::fmt_f64;
use crate::model::{ClientRecord, MdmParams, SampleCountDist};
use crate::sampling::{sample_client, sample_count, RngHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Mdm,
    FullyIid,
    /// Copies each true client's histogram; needs every client to reveal it.
    ConditionallyIid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedClient {
    pub target_c: Vec<u32>,
    /// Category → assigned pool row indices; only categories with a
    /// positive target appear.
    pub rows: BTreeMap<usize, Vec<usize>>,
    /// Category → whether its rows were drawn with replacement.
    pub replacement: BTreeMap<usize, bool>,
}

impl SimulatedClient {
    pub fn n(&self) -> u32 {
        self.target_c.iter().sum()
    }

    /// Per-category counts of the rows actually assigned.
    pub fn realized_counts(&self) -> Vec<u32> {
        let mut out = vec![0; self.target_c.len()];
        for (&l, rows) in &self.rows {
            if let Some(slot) = out.get_mut(l) {
                *slot += rows.len() as u32;
            }
        }
        out
    }

    pub fn histogram(&self) -> Result<ClientRecord> {
        ClientRecord::from_counts(self.target_c.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub clients: Vec<SimulatedClient>,
    pub generator: Generator,
    pub seed: RngHandle,
}

impl PartitionPlan {
    pub fn histograms(&self) -> Result<ClientPopulation> {
        ClientPopulation::new(
            self.clients
                .iter()
                .map(SimulatedClient::histogram)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// One client object per line.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for client in &self.clients {
            serde_json::to_writer(&mut writer, client)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parse simulated clients written by [`PartitionPlan::write_jsonl`].
pub fn read_plan_clients<R: BufRead>(reader: R) -> Result<Vec<SimulatedClient>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let client: SimulatedClient = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        out.push(client);
    }
    Ok(out)
}

/// Draw rows for a target histogram, bucket by bucket.
fn fill_client<R: Rng + ?Sized>(
    pool: &CentralPool,
    target_c: Vec<u32>,
    rng: &mut R,
) -> Result<SimulatedClient> {
    let mut rows = BTreeMap::new();
    let mut replacement = BTreeMap::new();
    for (l, &count) in target_c.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let bucket = pool.bucket(l);
        let want = count as usize;
        if bucket.is_empty() {
            return Err(Error::Partition(format!(
                "category {l} is needed ({count} rows) but its pool bucket is empty"
            )));
        }
        let (picked, replaced) = if bucket.len() >= want {
            (
                index::sample(rng, bucket.len(), want)
                    .into_iter()
                    .map(|j| bucket[j])
                    .collect(),
                false,
            )
        } else {
            (
                (0..want)
                    .map(|_| bucket[rng.random_range(0..bucket.len())])
                    .collect(),
                true,
            )
        };
        rows.insert(l, picked);
        replacement.insert(l, replaced);
    }
    Ok(SimulatedClient {
        target_c,
        rows,
        replacement,
    })
}

fn check_count(num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::contract(
            "number of simulated clients must be positive",
        ));
    }
    Ok(())
}

/// Sample each client's histogram from the learned mixture, then fill it
/// from the pool.
pub fn partition_mdm(
    pool: &CentralPool,
    params: &MdmParams,
    num_clients: usize,
    rng: RngHandle,
) -> Result<PartitionPlan> {
    check_count(num_clients)?;
    if params.c() != pool.num_categories() {
        return Err(Error::contract(format!(
            "model has C = {} but the pool has {} categories",
            params.c(),
            pool.num_categories()
        )));
    }
    let clients = (0..num_clients)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64).rng();
            let (rec, _) = sample_client(params, &mut r);
            fill_client(pool, rec.counts().to_vec(), &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionPlan {
        clients,
        generator: Generator::Mdm,
        seed: rng,
    })
}

/// Baseline ignoring heterogeneity: `n` rows drawn uniformly from the whole
/// pool for every client.
pub fn partition_fully_iid(
    pool: &CentralPool,
    n_distribution: &SampleCountDist,
    num_clients: usize,
    rng: RngHandle,
) -> Result<PartitionPlan> {
    check_count(num_clients)?;
    let all = pool.row_categories();
    if all.is_empty() {
        return Err(Error::Partition("central pool is empty".into()));
    }
    let c = pool.num_categories();
    let clients = (0..num_clients)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64).rng();
            let n = sample_count(n_distribution, &mut r) as usize;
            if n > all.len() {
                return Err(Error::Partition(format!(
                    "client needs {n} rows but the pool only holds {}",
                    all.len()
                )));
            }
            let mut target_c = vec![0u32; c];
            let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for j in index::sample(&mut r, all.len(), n) {
                let (row, l) = all[j];
                target_c[l] += 1;
                rows.entry(l).or_default().push(row);
            }
            let replacement = rows.keys().map(|&l| (l, false)).collect();
            Ok(SimulatedClient {
                target_c,
                rows,
                replacement,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionPlan {
        clients,
        generator: Generator::FullyIid,
        seed: rng,
    })
}

/// Oracle baseline: one simulated client per true client with exactly its
/// histogram. Only usable when true histograms are known.
pub fn partition_conditionally_iid(
    pool: &CentralPool,
    true_pop: &ClientPopulation,
    rng: RngHandle,
) -> Result<PartitionPlan> {
    if true_pop.num_categories() != pool.num_categories() {
        return Err(Error::contract(format!(
            "clients have C = {} but the pool has {} categories",
            true_pop.num_categories(),
            pool.num_categories()
        )));
    }
    let clients = true_pop
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| fill_client(pool, rec.counts().to_vec(), &mut rng.derive(i as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionPlan {
        clients,
        generator: Generator::ConditionallyIid,
        seed: rng,
    })
}

/// Normalized histogram `c / n` of every client.
pub fn export_histograms(records: &[ClientRecord]) -> Vec<Vec<f64>> {
    records.iter().map(ClientRecord::normalized).collect()
}

/// CSV with header `p_0,…,p_{C-1}`.
pub fn write_histograms_csv<W: Write>(rows: &[Vec<f64>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let c = rows.first().map_or(0, Vec::len);
    w.write_record((0..c).map(|l| format!("p_{l}")))?;
    for row in rows {
        w.write_record(row.iter().map(|&p| fmt_f64(p)))?;
    }
    w.flush()?;
    Ok(())
}
