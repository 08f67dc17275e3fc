//! Plain-text policy checkpoints.
//!
//! ```text
//! vendirl-policy v1
//! skills 8
//! obs_dim 2
//! action_dim 2
//! log_std_bounds -5 1
//! layers 10 64 64 4
//! params 5060
//! <one parameter per line, shortest round-trip decimal>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Mlp, PolicySkillSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "vendirl-policy v1";

pub fn write_policy<W: Write>(policy: &PolicySkillSet, mut out: W) -> Result<()> {
    let (lo, hi) = policy.log_std_bounds();
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    writeln!(out, "skills {}", policy.n_skills())?;
    writeln!(out, "obs_dim {}", policy.obs_dim())?;
    writeln!(out, "action_dim {}", policy.action_dim())?;
    writeln!(out, "log_std_bounds {lo:?} {hi:?}")?;
    let layers: Vec<String> = policy.net().sizes().iter().map(|s| s.to_string()).collect();
    writeln!(out, "layers {}", layers.join(" "))?;
    writeln!(out, "params {}", policy.params().len())?;
    for p in policy.params() {
        writeln!(out, "{p:?}")?;
    }
    Ok(())
}

pub fn save_policy(policy: &PolicySkillSet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_policy(policy, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<Vec<&'a str>> {
    let line = line.ok_or_else(|| Error::Checkpoint(format!("missing '{key}' line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Checkpoint(format!("expected '{key}', found '{line}'")));
    }
    Ok(parts.collect())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse {what} from '{s}'")))
}

fn single<T: std::str::FromStr>(values: Vec<&str>, what: &str) -> Result<T> {
    match values.as_slice() {
        [v] => parse(v, what),
        _ => Err(Error::Checkpoint(format!("expected one value for {what}"))),
    }
}

pub fn read_policy<R: Read>(input: R) -> Result<PolicySkillSet> {
    let lines: Vec<String> = BufReader::new(input).lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
    match it.next() {
        Some(h) if h == CHECKPOINT_HEADER => {}
        Some(h) => return Err(Error::Checkpoint(format!("unsupported header '{h}'"))),
        None => return Err(Error::Checkpoint("empty file".into())),
    }
    let skills: usize = single(field(it.next(), "skills")?, "skills")?;
    let obs_dim: usize = single(field(it.next(), "obs_dim")?, "obs_dim")?;
    let action_dim: usize = single(field(it.next(), "action_dim")?, "action_dim")?;
    let bounds = field(it.next(), "log_std_bounds")?;
    if bounds.len() != 2 {
        return Err(Error::Checkpoint("log_std_bounds needs two values".into()));
    }
    let bounds = (parse(bounds[0], "log_std_min")?, parse(bounds[1], "log_std_max")?);
    let layers = field(it.next(), "layers")?
        .into_iter()
        .map(|s| parse::<usize>(s, "layer size"))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = single(field(it.next(), "params")?, "params")?;
    let params = it
        .map(|s| parse::<f64>(s, "parameter"))
        .collect::<Result<Vec<_>>>()?;
    if params.len() != count {
        return Err(Error::Checkpoint(format!(
            "header announces {count} parameters, file holds {}",
            params.len()
        )));
    }
    let net = Mlp::from_params(&layers, params).ok_or_else(|| {
        Error::Checkpoint(format!("{count} parameters do not fit layers {layers:?}"))
    })?;
    PolicySkillSet::from_parts(skills, obs_dim, action_dim, bounds, net)
}

pub fn load_policy(path: &Path) -> Result<PolicySkillSet> {
    read_policy(fs::File::open(path)?)
}
