//! Short textual forms for policies and control modes used on the command line.

use anyhow::{anyhow, bail};
use equisel_core::agents::{AgentPolicy, DecisionRule};
use equisel_core::controller::{ControlMode, Sharing, DEFAULT_GAIN_SCALE};

fn split(s: &str) -> (&str, Option<&str>) {
    match s.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    }
}

fn number(v: Option<&str>, default: f64) -> anyhow::Result<f64> {
    v.map_or(Ok(default), |x| x.parse().map_err(|_| anyhow!("not a number: {x:?}")))
}

/// `logit[:beta]`, `imitation[:mutation]` or `best-response[:epsilon]`.
pub fn policy(s: &str) -> anyhow::Result<AgentPolicy> {
    let (name, arg) = split(s);
    let p = match name {
        "logit" => AgentPolicy::logit(number(arg, 4.0)?),
        "imitation" => AgentPolicy::imitation(number(arg, 0.0)?),
        "best-response" => AgentPolicy {
            rule: DecisionRule::NoisyBestResponse {
                epsilon: number(arg, 0.05)?,
            },
            ..AgentPolicy::default()
        },
        other => bail!("unknown policy {other:?} (logit, imitation, best-response)"),
    };
    p.validate()?;
    Ok(p)
}

/// `payoff[:gamma]`, `per-capita[:gamma]` or `velocity`.
pub fn mode(s: &str) -> anyhow::Result<ControlMode> {
    let (name, arg) = split(s);
    Ok(match name {
        "payoff" => ControlMode::payoff(number(arg, DEFAULT_GAIN_SCALE)?, Sharing::Flat)?,
        "per-capita" => ControlMode::payoff(number(arg, DEFAULT_GAIN_SCALE)?, Sharing::PerCapita)?,
        "velocity" => ControlMode::Velocity,
        other => bail!("unknown mode {other:?} (payoff, per-capita, velocity)"),
    })
}

/// Five comma-separated shares.
pub fn point(s: &str) -> anyhow::Result<[f64; 5]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| anyhow!("not a number: {x:?}")))
        .collect::<anyhow::Result<_>>()?;
    v.try_into().map_err(|v: Vec<f64>| anyhow!("expected 5 shares, got {}", v.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies() {
        assert_eq!(policy("logit").unwrap(), AgentPolicy::default());
        assert_eq!(policy("imitation:0.01").unwrap(), AgentPolicy::imitation(0.01));
        assert!(matches!(
            policy("best-response:0.1").unwrap().rule,
            DecisionRule::NoisyBestResponse { epsilon } if epsilon == 0.1
        ));
        assert!(policy("imitation:2").is_err());
        assert!(policy("greedy").is_err());
    }

    #[test]
    fn modes() {
        assert!(matches!(
            mode("payoff:4").unwrap(),
            ControlMode::Payoff { gain_scale, sharing: Sharing::Flat } if gain_scale == 4.0
        ));
        assert!(matches!(mode("per-capita").unwrap(), ControlMode::Payoff { sharing: Sharing::PerCapita, .. }));
        assert_eq!(mode("velocity").unwrap(), ControlMode::Velocity);
        assert!(mode("payoff:x").is_err());
    }

    #[test]
    fn points() {
        assert_eq!(point("0.2, 0.2,0.2,0.2,0.2").unwrap(), [0.2; 5]);
        assert!(point("1,0").is_err());
    }
}
