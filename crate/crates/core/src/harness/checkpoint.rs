//! Agent checkpoints: a text manifest (format version, schedule position and
//! the full experiment configuration) followed by one network checkpoint per
//! named network.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;

use super::{ExperimentConfig, HarnessError, Result};
use crate::agents::Agent;
use crate::neural::Mlp;
use crate::SeededRng;

const MAGIC: &str = "agar-lab-agent 1";

/// An agent together with the configuration it was trained under.
#[derive(Debug, Clone)]
pub struct AgentCheckpoint {
    pub config: ExperimentConfig,
    pub agent: Agent,
}

pub fn write_agent<W: Write>(config: &ExperimentConfig, agent: &Agent, out: &mut W) -> Result<()> {
    let nets = agent.networks();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "train_steps {}", agent.train_steps())?;
    writeln!(out, "horizon {}", agent.horizon())?;
    writeln!(out, "config {}", ExperimentConfig::KEYS.len())?;
    out.write_all(config.to_text().as_bytes())?;
    writeln!(out, "networks {}", nets.len())?;
    writeln!(out, "end")?;
    for (name, net) in nets {
        writeln!(out, "network {name}")?;
        net.write_checkpoint(out)?;
    }
    Ok(())
}

pub fn save_agent(path: &Path, config: &ExperimentConfig, agent: &Agent) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| HarnessError::Io(format!("creating {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    write_agent(config, agent, &mut out)?;
    out.flush()?;
    Ok(())
}

fn format_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(format_err("unexpected end of manifest"));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    line.strip_prefix(key)
        .and_then(|v| v.strip_prefix(' '))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(format!("expected `{key} <value>`, found {line:?}")))
}

pub fn read_agent<R: BufRead>(input: &mut R) -> Result<AgentCheckpoint> {
    let magic = read_line(input)?;
    if magic != MAGIC {
        return Err(format_err(format!(
            "not an agent checkpoint (header {magic:?})"
        )));
    }
    let train_steps: u64 = field(&read_line(input)?, "train_steps")?;
    let horizon: u64 = field(&read_line(input)?, "horizon")?;
    let keys: usize = field(&read_line(input)?, "config")?;
    let mut text = String::new();
    for _ in 0..keys {
        text.push_str(&read_line(input)?);
        text.push('\n');
    }
    let config =
        ExperimentConfig::parse(&text).map_err(|e| format_err(format!("manifest config: {e}")))?;
    let count: usize = field(&read_line(input)?, "networks")?;
    if read_line(input)? != "end" {
        return Err(format_err("missing manifest terminator"));
    }

    // Builds the agent skeleton, then overwrites every network.
    let width = config.grids().feature_len();
    let mut agent = Agent::new(
        config.agent.clone(),
        width,
        horizon,
        &mut SeededRng::seed_from_u64(0),
    )?;
    let expected: Vec<&'static str> = agent.networks().iter().map(|(n, _)| *n).collect();
    if count != expected.len() {
        return Err(format_err(format!(
            "expected {} networks, found {count}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for name in &expected {
        let line = read_line(input)?;
        if line != format!("network {name}") {
            return Err(format_err(format!(
                "expected network {name}, found {line:?}"
            )));
        }
        loaded.push(Mlp::read_checkpoint(input)?);
    }
    for ((name, slot), net) in agent.networks_mut().into_iter().zip(loaded) {
        let same_shape = slot.input_width() == net.input_width()
            && slot.output_width() == net.output_width()
            && slot.action_width() == net.action_width()
            && slot.parameter_count() == net.parameter_count();
        if !same_shape {
            return Err(format_err(format!(
                "network {name} does not match the configured architecture"
            )));
        }
        *slot = net;
    }
    agent.set_train_steps(train_steps);
    Ok(AgentCheckpoint { config, agent })
}

pub fn load_agent(path: &Path) -> Result<AgentCheckpoint> {
    let file = File::open(path)
        .map_err(|e| HarnessError::Io(format!("opening {}: {e}", path.display())))?;
    read_agent(&mut BufReader::new(file))
}
