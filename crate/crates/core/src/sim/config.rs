use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::labeling::ProtocolParams;

/// Which protocol layers the simulated processors run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stack {
    /// Label diffusion only.
    Labeling,
    /// Counter diffusion and quorum operations.
    Counter,
    /// Data links with sequence-numbered payloads.
    Link,
    /// Data links feeding failure detectors.
    Fd,
    /// Links, failure detectors, counters and virtual synchrony.
    Vs,
}

impl Stack {
    pub fn has_links(self) -> bool {
        matches!(self, Stack::Link | Stack::Fd | Stack::Vs)
    }

    pub fn has_fd(self) -> bool {
        matches!(self, Stack::Fd | Stack::Vs)
    }

    pub fn has_counters(self) -> bool {
        matches!(self, Stack::Counter | Stack::Vs)
    }

    /// Label pairs per packet summed over the lanes that carry labels.
    pub fn pairs_per_packet(self) -> usize {
        match self {
            Stack::Labeling => 2,
            Stack::Counter | Stack::Vs => 3,
            Stack::Link | Stack::Fd => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrashTarget {
    Pid(u32),
    /// The processor most active processors consider their coordinator.
    Coordinator,
    /// A live processor that follows some other coordinator.
    Follower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSpec {
    pub step: u64,
    pub target: CrashTarget,
}

/// Crash `0..=max` random processors at random steps in `[from, to)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomCrashes {
    pub max: usize,
    pub from: u64,
    pub to: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossModel {
    pub drop: f64,
    pub duplicate: f64,
    /// Lower bound on the probability that a scheduled packet is delivered.
    pub fairness_floor: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        LossModel {
            drop: 0.05,
            duplicate: 0.05,
            fairness_floor: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbitraryBounds {
    /// Most pairs injected into one queue.
    pub max_queue_fill: usize,
    /// Fill every channel lane with up to `c` garbage packets.
    pub channel_garbage: bool,
    /// Probability that an injected counter is exhausted.
    pub exhausted_ratio: f64,
    /// Give every maximal counter a sequence number at or above the threshold.
    pub exhaust_all: bool,
    /// Plant a cycle of three pairwise-ordered labels of one creator.
    pub label_cycle: bool,
    /// Randomize data link and failure detector state.
    pub corrupt_links: bool,
}

impl Default for ArbitraryBounds {
    fn default() -> Self {
        ArbitraryBounds {
            max_queue_fill: 4,
            channel_garbage: true,
            exhausted_ratio: 0.2,
            exhaust_all: false,
            label_cycle: true,
            corrupt_links: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Clean,
    Arbitrary(ArbitraryBounds),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueMode {
    /// Capacities from the convergence bounds, `k = 2 × own capacity`.
    Safe,
    Test {
        own: usize,
        k: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamsConfig {
    /// Suspicion threshold; `4n` when absent.
    pub w: Option<u32>,
    #[serde(with = "crate::sim::wide")]
    pub pce: u128,
    /// Counter and round exhaustion threshold; `2^64` when absent.
    #[serde(with = "crate::sim::wide::option")]
    pub exhaustion_threshold: Option<u128>,
    pub queues: QueueMode,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            w: None,
            pce: 8,
            exhaustion_threshold: None,
            queues: QueueMode::Safe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryPartition {
    pub majority: Vec<u32>,
    pub leader: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpMix {
    Increment,
    /// Register writes and reads; `read_percent` of the operations are reads.
    Register {
        read_percent: u8,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workload {
    pub clients: Vec<u32>,
    pub ops_per_client: u32,
    pub mix: OpMix,
    pub start_step: u64,
    /// Idle steps a client waits between its operations.
    pub think_steps: u64,
    /// Payloads each link sender produces; unbounded when absent.
    pub link_payloads: Option<u64>,
    /// Inputs each replica fetches; unbounded when absent.
    pub vs_inputs: Option<u64>,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            clients: Vec::new(),
            ops_per_client: 0,
            mix: OpMix::Increment,
            start_step: 0,
            think_steps: 0,
            link_payloads: None,
            vs_inputs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub stack: Stack,
    pub n: usize,
    pub link_capacity: u32,
    pub seed: u64,
    pub step_budget: u64,
    pub crash_schedule: Vec<CrashSpec>,
    pub random_crashes: Option<RandomCrashes>,
    pub loss: LossModel,
    pub init: InitMode,
    pub params: ParamsConfig,
    pub primary_partition: Option<PrimaryPartition>,
    pub workload: Workload,
    /// Steps without adopt/create events required before a run counts as
    /// converged; a quarter of the budget when absent.
    pub quiet_window: Option<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "unnamed".into(),
            stack: Stack::Labeling,
            n: 3,
            link_capacity: 2,
            seed: 0,
            step_budget: 1_000_000,
            crash_schedule: Vec::new(),
            random_crashes: None,
            loss: LossModel::default(),
            init: InitMode::Clean,
            params: ParamsConfig::default(),
            primary_partition: None,
            workload: Workload::default(),
            quiet_window: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let c: ScenarioConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn max_crashes(&self) -> usize {
        self.n - (self.n / 2 + 1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.link_capacity == 0 {
            return bad("link_capacity must be at least 1".into());
        }
        let l = &self.loss;
        if !(l.fairness_floor > 0.0 && l.fairness_floor <= 1.0) {
            return bad("fairness_floor must be in (0, 1]".into());
        }
        if !(0.0..=1.0 - l.fairness_floor).contains(&l.drop) {
            return bad(format!("drop probability {} exceeds 1 - fairness_floor", l.drop));
        }
        if !(0.0..=1.0).contains(&l.duplicate) {
            return bad("duplicate probability must be in [0, 1]".into());
        }
        let crashes = self.crash_schedule.len() + self.random_crashes.map_or(0, |r| r.max);
        if crashes > self.max_crashes() {
            return bad(format!(
                "{crashes} crashes would leave no active majority of {}",
                self.n
            ));
        }
        for c in &self.crash_schedule {
            if let CrashTarget::Pid(p) = c.target {
                if p as usize >= self.n {
                    return bad(format!("crash target {p} out of range"));
                }
            }
        }
        if let Some(r) = self.random_crashes {
            if r.from >= r.to && r.max > 0 {
                return bad("random_crashes window is empty".into());
            }
        }
        if let Some(pp) = &self.primary_partition {
            if pp.majority.len() <= self.n / 2 {
                return bad("primary partition majority is not a majority".into());
            }
            if pp.majority.iter().chain([&pp.leader]).any(|&p| p as usize >= self.n) {
                return bad("primary partition names an unknown processor".into());
            }
        }
        if self.workload.clients.iter().any(|&p| p as usize >= self.n) {
            return bad("workload client out of range".into());
        }
        if self.params.pce == 0 {
            return bad("pce must be positive".into());
        }
        if self.params.exhaustion_threshold.is_some_and(|t| t < 2) {
            return bad("exhaustion_threshold must be at least 2".into());
        }
        if let QueueMode::Test { own, k } = self.params.queues {
            if own == 0 || k == 0 {
                return bad("test-mode queue sizes must be positive".into());
            }
        }
        self.protocol_params()?;
        Ok(())
    }

    /// Number of directed links.
    pub fn links(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// Total in-transit label-pair capacity.
    pub fn m(&self) -> usize {
        self.links() * self.link_capacity as usize * self.stack.pairs_per_packet()
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams, ConfigError> {
        let r = match self.params.queues {
            QueueMode::Safe => ProtocolParams::safe(self.n, self.m()),
            QueueMode::Test { own, k } => ProtocolParams::custom(self.n, self.m(), own, k),
        };
        r.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn w(&self) -> u32 {
        self.params.w.unwrap_or(4 * self.n as u32)
    }

    pub fn threshold(&self) -> u128 {
        self.params.exhaustion_threshold.unwrap_or(1u128 << 64)
    }

    pub fn quiet_window(&self) -> u64 {
        self.quiet_window.unwrap_or(self.step_budget / 4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_sizes_for_five_processors() {
        let c = ScenarioConfig {
            n: 5,
            link_capacity: 2,
            ..Default::default()
        };
        assert_eq!(c.m(), 80);
        let p = c.protocol_params().unwrap();
        assert_eq!(p.own_queue_cap, 881);
        assert_eq!(p.other_queue_cap, 85);
        assert_eq!(p.scheme.k(), 1762);
        assert!(p.is_safe_mode());
    }

    #[test]
    fn rejects_majority_crashes_and_unfair_loss() {
        let mut c = ScenarioConfig {
            n: 5,
            ..Default::default()
        };
        c.random_crashes = Some(RandomCrashes {
            max: 3,
            from: 0,
            to: 10,
        });
        assert!(c.validate().is_err());
        c.random_crashes = None;
        c.loss.drop = 0.9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn parses_minimal_json() {
        let c = ScenarioConfig::from_json(
            r#"{"stack":"vs","n":3,"init":{"arbitrary":{"max_queue_fill":2}},
                "crash_schedule":[{"step":10,"target":"coordinator"}]}"#,
        )
        .unwrap();
        assert_eq!(c.stack, Stack::Vs);
        assert!(matches!(c.init, InitMode::Arbitrary(b) if b.max_queue_fill == 2 && b.channel_garbage));
        assert_eq!(c.crash_schedule[0].target, CrashTarget::Coordinator);
    }
}
