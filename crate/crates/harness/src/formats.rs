//! On-disk formats: realizations and experiences as JSON lines, policy
//! parameters as versioned plain text, metrics as JSON lines.

use std::io::{BufRead, Write};

use mgpg_core::mdp::{Experience, Step};
use mgpg_core::policy::Architecture;
use mgpg_core::scenario::{ChannelParams, Geometry, UserRequest};
use mgpg_core::{EpisodeRecord, PolicyParams, Realization};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const PARAMS_MAGIC: &str = "mgpg-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealizationHeader {
    seed: u64,
    users: usize,
    geometry: Geometry,
    channel: ChannelParams,
}

fn io_err(e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: "<stream>".into(), source: e }
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| io_err(e.into()))?;
    w.write_all(b"\n").map_err(io_err)
}

/// Header line with geometry, channel and seed, then one line per user.
pub fn write_realization(r: &Realization, w: &mut impl Write) -> Result<()> {
    let header = RealizationHeader {
        seed: r.seed(),
        users: r.users().len(),
        geometry: r.geometry().clone(),
        channel: r.channel().clone(),
    };
    json_line(w, &header)?;
    for u in r.users() {
        json_line(w, u)?;
    }
    Ok(())
}

pub fn read_realization(reader: impl BufRead) -> Result<Realization> {
    const WHAT: &str = "realization";
    let mut lines = reader.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let parse = |line: usize, text: std::io::Result<String>| -> Result<String> {
        text.map_err(|e| HarnessError::Parse { what: WHAT, line: line + 1, message: e.to_string() })
    };
    let (n, first) = lines.next().ok_or(HarnessError::Parse { what: WHAT, line: 1, message: "empty input".into() })?;
    let header: RealizationHeader = serde_json::from_str(&parse(n, first)?).map_err(|e| HarnessError::Parse {
        what: WHAT,
        line: n + 1,
        message: e.to_string(),
    })?;
    let mut users = Vec::with_capacity(header.users);
    for (n, text) in lines {
        let user: UserRequest = serde_json::from_str(&parse(n, text)?).map_err(|e| HarnessError::Parse {
            what: WHAT,
            line: n + 1,
            message: e.to_string(),
        })?;
        users.push(user);
    }
    if users.len() != header.users {
        return Err(HarnessError::Parse {
            what: WHAT,
            line: 1,
            message: format!("header declares {} users, found {}", header.users, users.len()),
        });
    }
    Ok(Realization::new(header.geometry, header.channel, users, header.seed)?)
}

/// One line per step.
pub fn write_experience(e: &Experience, w: &mut impl Write) -> Result<()> {
    for s in &e.steps {
        json_line(w, s)?;
    }
    Ok(())
}

pub fn read_experience(reader: impl BufRead) -> Result<Experience> {
    let mut steps = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let step: Step = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            what: "experience",
            line: n + 1,
            message: e.to_string(),
        })?;
        steps.push(step);
    }
    let total_utility = steps.iter().map(|s| s.reward).sum();
    Ok(Experience { steps, total_utility })
}

pub fn write_metrics(records: &[EpisodeRecord], w: &mut impl Write) -> Result<()> {
    for r in records {
        json_line(w, r)?;
    }
    Ok(())
}

pub fn read_metrics(reader: impl BufRead) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            what: "metrics",
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Training position stored alongside parameters in a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub eta: f64,
    pub episode: usize,
}

/// ```text
/// mgpg-params 1
/// arch <inputs> <hidden> <outputs>
/// eta <value>          (checkpoints only)
/// episode <n>          (checkpoints only)
/// <one parameter per line>
/// ```
/// Values use the shortest representation that parses back to the same bits.
pub fn write_params(params: &PolicyParams, progress: Option<Progress>, w: &mut impl Write) -> Result<()> {
    let a = params.arch();
    let mut out = format!("{PARAMS_MAGIC} {PARAMS_VERSION}\narch {} {} {}\n", a.inputs, a.hidden, a.outputs);
    if let Some(p) = progress {
        out.push_str(&format!("eta {:?}\nepisode {}\n", p.eta, p.episode));
    }
    for v in params.as_slice() {
        out.push_str(&format!("{v:?}\n"));
    }
    w.write_all(out.as_bytes()).map_err(io_err)
}

pub fn read_params(reader: impl BufRead) -> Result<(PolicyParams, Option<Progress>)> {
    let err = |line: usize, message: String| HarnessError::Parse { what: "params", line, message };
    let mut lines = Vec::new();
    for l in reader.lines() {
        lines.push(l.map_err(io_err)?);
    }
    let header: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
    match header.as_slice() {
        [magic, v] if *magic == PARAMS_MAGIC && v.parse() == Ok(PARAMS_VERSION) => {}
        [magic, v] if *magic == PARAMS_MAGIC => return Err(err(1, format!("unsupported version {v}"))),
        _ => return Err(err(1, format!("expected `{PARAMS_MAGIC} {PARAMS_VERSION}`"))),
    }
    let arch_fields: Vec<&str> = lines.get(1).map(|l| l.split_whitespace().collect()).unwrap_or_default();
    let arch = match arch_fields.as_slice() {
        ["arch", i, h, o] => {
            let p = |s: &str| s.parse::<usize>().map_err(|e| err(2, e.to_string()));
            Architecture { inputs: p(i)?, hidden: p(h)?, outputs: p(o)? }
        }
        _ => return Err(err(2, "expected `arch <inputs> <hidden> <outputs>`".into())),
    };
    let mut i = 2;
    let mut eta = None;
    let mut episode = None;
    while let Some(line) = lines.get(i) {
        match line.split_once(' ') {
            Some(("eta", v)) => eta = Some(v.trim().parse::<f64>().map_err(|e| err(i + 1, e.to_string()))?),
            Some(("episode", v)) => episode = Some(v.trim().parse::<usize>().map_err(|e| err(i + 1, e.to_string()))?),
            _ => break,
        }
        i += 1;
    }
    let progress = match (eta, episode) {
        (Some(eta), Some(episode)) => Some(Progress { eta, episode }),
        (None, None) => None,
        _ => return Err(err(i, "checkpoint needs both `eta` and `episode`".into())),
    };
    let mut theta = Vec::with_capacity(arch.num_params());
    for (n, line) in lines.iter().enumerate().skip(i) {
        if line.trim().is_empty() {
            continue;
        }
        theta.push(line.trim().parse::<f64>().map_err(|e| err(n + 1, e.to_string()))?);
    }
    let params = PolicyParams::new(arch, theta).map_err(|e| err(i + 1, e.to_string()))?;
    Ok((params, progress))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgpg_core::mdp::{rollout, UniformPolicy};
    use mgpg_core::rng::{seeded, Stream};
    use mgpg_core::{generate_realization, ScenarioSpec};

    fn sample() -> Realization {
        generate_realization(&ScenarioSpec { users: 12, ..ScenarioSpec::default() }, 5).unwrap()
    }

    #[test]
    fn realization_round_trip() {
        let r = sample();
        let mut buf = Vec::new();
        write_realization(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 13);
        assert_eq!(read_realization(&buf[..]).unwrap(), r);
    }

    #[test]
    fn realization_user_count_checked() {
        let r = sample();
        let mut buf = Vec::new();
        write_realization(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_realization(truncated.as_bytes()), Err(HarnessError::Parse { .. })));
        let broken = text.replacen("\"bits\"", "\"bitz\"", 1);
        match read_realization(broken.as_bytes()) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn experience_round_trip() {
        let r = sample();
        let e = rollout(&r, &UniformPolicy, &mut seeded(1, Stream::Eval));
        let mut buf = Vec::new();
        write_experience(&e, &mut buf).unwrap();
        let back = read_experience(&buf[..]).unwrap();
        assert_eq!(back.steps, e.steps);
        assert!((back.total_utility - e.total_utility).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip_is_bit_exact() {
        let arch = Architecture::for_clusters(3, 4);
        let theta: Vec<f64> = (0..arch.num_params()).map(|i| (i as f64 * 0.731).sin() / 3.0 + 1e-300).collect();
        let params = PolicyParams::new(arch, theta).unwrap();
        for progress in [None, Some(Progress { eta: 0.123456789, episode: 42 })] {
            let mut buf = Vec::new();
            write_params(&params, progress, &mut buf).unwrap();
            let (back, p) = read_params(&buf[..]).unwrap();
            assert_eq!(back, params);
            assert_eq!(p, progress);
        }
    }

    #[test]
    fn params_header_checked() {
        assert!(read_params("mgpg-params 2\narch 1 1 1\n".as_bytes()).is_err());
        assert!(read_params("nonsense\n".as_bytes()).is_err());
        // wrong number of values
        assert!(read_params("mgpg-params 1\narch 3 1 2\n0.0\n".as_bytes()).is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let recs = vec![
            EpisodeRecord {
                episode: 0,
                utility_e: 0.25,
                utility_e_prime: Some(0.5),
                eta: 0.9,
                grad_norm: 1.5,
                meta_grad: Some(-0.01),
            },
            EpisodeRecord {
                episode: 1,
                utility_e: 0.3,
                utility_e_prime: None,
                eta: 0.9,
                grad_norm: 0.0,
                meta_grad: None,
            },
        ];
        let mut buf = Vec::new();
        write_metrics(&recs, &mut buf).unwrap();
        assert_eq!(read_metrics(&buf[..]).unwrap(), recs);
    }
}
