//! Closed-form latency of one B-FL training round.
//!
//! A round has six communication steps (upload, pre-prepare, prepare, commit,
//! reply, download) and seven computation steps (local training, signing,
//! aggregation, and the per-phase signature work of the consensus exchange).
//! Transmissions within a step run in parallel and steps are synchronized
//! barriers, so each step costs the maximum over its participants and the
//! round total is the plain sum of all thirteen terms.
//!
//! Every link rate uses the sender's allocated bandwidth and power with the
//! sender-receiver gain; broadcasts are one transmission heard by all
//! receivers, costing the maximum over receivers. Bandwidth and power slices
//! follow the crate node order (devices `0..K`, then servers).

use crate::channel::{packet_latency, transmission_rate, LinkGains};
use crate::{Error, Result};

/// CPU-side cost model.
#[derive(Debug, Clone)]
pub struct ComputeParams {
    /// Cycles/s of each server.
    pub server_freqs: Vec<f64>,
    /// Cycles/s of each device.
    pub device_freqs: Vec<f64>,
    /// Cycles to generate or verify one signature (rho).
    pub sig_cycles: f64,
    /// Cycles for one secure-aggregation execution (sigma).
    pub agg_cycles: f64,
    /// Cycles to train on one sample (delta).
    pub cycles_per_sample: f64,
    /// Batch size of each device.
    pub batch_sizes: Vec<u64>,
}

impl ComputeParams {
    /// Homogeneous cell: every server at `f_server`, every device at
    /// `f_device` with a common batch size.
    pub fn homogeneous(
        servers: usize,
        devices: usize,
        f_server: f64,
        f_device: f64,
        sig_cycles: f64,
        agg_cycles: f64,
        cycles_per_sample: f64,
        batch_size: u64,
    ) -> Result<Self> {
        let p = Self {
            server_freqs: vec![f_server; servers],
            device_freqs: vec![f_device; devices],
            sig_cycles,
            agg_cycles,
            cycles_per_sample,
            batch_sizes: vec![batch_size; devices],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        for &f in &self.server_freqs {
            pos("server frequency", f)?;
        }
        for &f in &self.device_freqs {
            pos("device frequency", f)?;
        }
        pos("sig_cycles", self.sig_cycles)?;
        pos("agg_cycles", self.agg_cycles)?;
        pos("cycles_per_sample", self.cycles_per_sample)?;
        if self.batch_sizes.iter().any(|&b| b == 0) {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.device_freqs.len() != self.batch_sizes.len() {
            return Err(Error::Config(
                "device_freqs and batch_sizes must have equal length".into(),
            ));
        }
        Ok(())
    }
}

/// Payload sizes in bits.
#[derive(Debug, Clone, Copy)]
pub struct MessageSizes {
    /// One transaction (a signed local or global model).
    pub tx_bits: f64,
    /// One block: `(K + 1) * tx_bits`.
    pub block_bits: f64,
    /// One consensus message (prepare/commit/reply).
    pub msg_bits: f64,
}

impl MessageSizes {
    pub fn new(tx_bits: f64, msg_bits: f64, devices: usize) -> Result<Self> {
        if !(tx_bits > 0.0) {
            return Err(Error::Config(format!("tx_bits must be > 0, got {tx_bits}")));
        }
        if !(msg_bits > 0.0) {
            return Err(Error::Config(format!("msg_bits must be > 0, got {msg_bits}")));
        }
        let block_bits = (devices as f64 + 1.0) * tx_bits;
        if msg_bits >= block_bits {
            return Err(Error::Config(format!(
                "msg_bits ({msg_bits}) must be smaller than the block size ({block_bits})"
            )));
        }
        Ok(Self { tx_bits, block_bits, msg_bits })
    }
}

/// Communication latency of each step, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CommLatency {
    pub up: f64,
    pub preprepare: f64,
    pub prepare: f64,
    pub commit: f64,
    pub reply: f64,
    pub download: f64,
}

impl CommLatency {
    pub fn sum(&self) -> f64 {
        self.up + self.preprepare + self.prepare + self.commit + self.reply + self.download
    }

    pub fn entries(&self) -> [f64; 6] {
        [self.up, self.preprepare, self.prepare, self.commit, self.reply, self.download]
    }
}

/// Computation latency of each step, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompLatency {
    pub train: f64,
    pub up: f64,
    pub agg: f64,
    pub preprepare: f64,
    pub prepare: f64,
    pub commit: f64,
    pub reply: f64,
}

impl CompLatency {
    pub fn sum(&self) -> f64 {
        self.train + self.up + self.agg + self.preprepare + self.prepare + self.commit + self.reply
    }

    pub fn entries(&self) -> [f64; 7] {
        [self.train, self.up, self.agg, self.preprepare, self.prepare, self.commit, self.reply]
    }
}

/// Full per-round latency decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown {
    pub comm: CommLatency,
    pub comp: CompLatency,
    pub total: f64,
}

impl LatencyBreakdown {
    pub fn new(comm: CommLatency, comp: CompLatency) -> Self {
        let total = total_round_latency(&comm, &comp);
        Self { comm, comp, total }
    }
}

fn fault_bound(servers: usize) -> Result<usize> {
    if servers >= 4 && (servers - 1) % 3 == 0 {
        Ok((servers - 1) / 3)
    } else {
        Err(Error::Config(format!(
            "server count must satisfy m = 3f + 1 with f >= 1, got {servers}"
        )))
    }
}

/// Computation latencies of one round with the given primary.
pub fn computation_latencies(
    params: &ComputeParams,
    servers: usize,
    devices: usize,
    primary: usize,
) -> Result<CompLatency> {
    let f = fault_bound(servers)? as f64;
    if params.server_freqs.len() != servers {
        return Err(Error::Config(format!(
            "expected {servers} server frequencies, got {}",
            params.server_freqs.len()
        )));
    }
    if params.device_freqs.len() != devices || devices == 0 {
        return Err(Error::Config(format!(
            "expected {devices} (>= 1) device frequencies, got {}",
            params.device_freqs.len()
        )));
    }
    if primary >= servers {
        return Err(Error::Config(format!("primary index {primary} out of range")));
    }
    let rho = params.sig_cycles;
    let sigma = params.agg_cycles;
    let delta = params.cycles_per_sample;
    let k = devices as f64;

    let max_over = |iter: &mut dyn Iterator<Item = f64>| iter.fold(0.0f64, f64::max);

    let train = max_over(
        &mut params
            .device_freqs
            .iter()
            .zip(&params.batch_sizes)
            .map(|(&fr, &b)| b as f64 * delta / fr),
    );
    let up = max_over(&mut params.device_freqs.iter().map(|&fr| rho / fr));
    let agg = (k * rho + sigma) / params.server_freqs[primary];
    let preprepare = max_over(
        &mut params
            .server_freqs
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != primary)
            .map(|(_, &fr)| (rho + (k + 1.0) * rho + sigma) / fr),
    );
    let prepare = max_over(&mut params.server_freqs.iter().enumerate().map(|(m, &fr)| {
        let cycles = if m == primary { 2.0 * f * rho } else { rho + 2.0 * f * rho };
        cycles / fr
    }));
    let commit = max_over(
        &mut params
            .server_freqs
            .iter()
            .map(|&fr| (rho + 2.0 * f * rho) / fr),
    );
    let reply = max_over(&mut params.server_freqs.iter().enumerate().map(|(m, &fr)| {
        let cycles = if m == primary { 2.0 * f * rho } else { rho };
        cycles / fr
    }));

    Ok(CompLatency { train, up, agg, preprepare, prepare, commit, reply })
}

/// Communication latencies of one round.
///
/// `bandwidth` and `power` are indexed by node (devices `0..K`, then
/// servers). All broadcasts cost the worst receiver; the prepare step is
/// sent by validators only while the commit step is broadcast by every
/// server.
pub fn communication_latencies(
    bandwidth: &[f64],
    power: &[f64],
    gains: &LinkGains,
    sizes: &MessageSizes,
    n0: f64,
    servers: usize,
    devices: usize,
    primary: usize,
) -> CommLatency {
    let nodes = servers + devices;
    debug_assert_eq!(bandwidth.len(), nodes);
    debug_assert_eq!(power.len(), nodes);
    debug_assert_eq!(gains.nodes(), nodes);
    debug_assert!(primary < servers);

    let srv = |m: usize| devices + m;
    let rate = |from: usize, to: usize| {
        transmission_rate(bandwidth[from], power[from], gains.get(from, to), n0)
    };

    let mut up = 0.0f64;
    for k in 0..devices {
        up = up.max(packet_latency(sizes.tx_bits, rate(k, srv(primary))));
    }

    let mut preprepare = 0.0f64;
    for m in 0..servers {
        if m != primary {
            preprepare = preprepare.max(packet_latency(sizes.block_bits, rate(srv(primary), srv(m))));
        }
    }

    let mut prepare = 0.0f64;
    for m in 0..servers {
        if m == primary {
            continue;
        }
        for m2 in 0..servers {
            if m2 != m {
                prepare = prepare.max(packet_latency(sizes.msg_bits, rate(srv(m), srv(m2))));
            }
        }
    }

    let mut commit = 0.0f64;
    for m in 0..servers {
        for m2 in 0..servers {
            if m2 != m {
                commit = commit.max(packet_latency(sizes.msg_bits, rate(srv(m), srv(m2))));
            }
        }
    }

    let mut reply = 0.0f64;
    for m in 0..servers {
        if m != primary {
            reply = reply.max(packet_latency(sizes.msg_bits, rate(srv(m), srv(primary))));
        }
    }

    let mut download = 0.0f64;
    for k in 0..devices {
        download = download.max(packet_latency(sizes.tx_bits, rate(srv(primary), k)));
    }

    CommLatency { up, preprepare, prepare, commit, reply, download }
}

/// Round total: the sum of the six communication and seven computation terms.
pub fn total_round_latency(comm: &CommLatency, comp: &CompLatency) -> f64 {
    comm.sum() + comp.sum()
}
