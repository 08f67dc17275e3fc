//! `skill,rollout,t,x,y` trajectory tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Deserialize;
use vendirl::kernels::{SkillSample, Trajectory};

use crate::CliError;

pub const HEADER: [&str; 5] = ["skill", "rollout", "t", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TrajectoryRow {
    pub skill: usize,
    pub rollout: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
}

/// Rollouts grouped by skill, each rollout ordered by `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectorySet {
    pub skills: BTreeMap<usize, BTreeMap<usize, Trajectory>>,
}

impl TrajectorySet {
    pub fn from_samples(samples: &[SkillSample]) -> Self {
        let skills = samples
            .iter()
            .enumerate()
            .map(|(skill, s)| (skill, s.trajectories().iter().cloned().enumerate().collect()))
            .collect();
        Self { skills }
    }

    pub fn rollout_count(&self) -> usize {
        self.skills.values().map(BTreeMap::len).sum()
    }

    /// One sample per skill in skill order. Skill ids must be `0..n`.
    pub fn to_samples(&self) -> Result<Vec<SkillSample>, CliError> {
        for (expected, skill) in self.skills.keys().enumerate() {
            if *skill != expected {
                return Err(CliError::Data(format!(
                    "skill ids must be 0..n without gaps; missing skill {expected}"
                )));
            }
        }
        self.skills
            .values()
            .map(|rollouts| {
                SkillSample::new(rollouts.values().cloned().collect()).map_err(CliError::Core)
            })
            .collect()
    }
}

pub fn write_trajectories<W: Write>(set: &TrajectorySet, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for (skill, rollouts) in &set.skills {
        for (rollout, traj) in rollouts {
            for (t, obs) in traj.iter().enumerate() {
                w.write_record([
                    skill.to_string(),
                    rollout.to_string(),
                    t.to_string(),
                    obs[0].to_string(),
                    obs[1].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trajectories<R: Read>(input: R) -> Result<TrajectorySet, CliError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(HEADER) {
        return Err(CliError::Data(format!(
            "expected header '{}', found '{}'",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut steps: BTreeMap<usize, BTreeMap<usize, BTreeMap<usize, [f64; 2]>>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<TrajectoryRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| CliError::Data(format!("row {line}: {e}")))?;
        if !(row.x.is_finite() && row.y.is_finite()) {
            return Err(CliError::Data(format!("row {line}: non-finite coordinate")));
        }
        let rollout = steps.entry(row.skill).or_default().entry(row.rollout).or_default();
        if rollout.insert(row.t, [row.x, row.y]).is_some() {
            return Err(CliError::Data(format!(
                "row {line}: duplicate t={} for skill {} rollout {}",
                row.t, row.skill, row.rollout
            )));
        }
    }
    let skills = steps
        .into_iter()
        .map(|(skill, rollouts)| {
            let rollouts = rollouts
                .into_iter()
                .map(|(r, points)| (r, points.into_values().map(|p| p.to_vec()).collect()))
                .collect();
            (skill, rollouts)
        })
        .collect();
    Ok(TrajectorySet { skills })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_ordering() {
        let text = "skill,rollout,t,x,y\n1,0,1,0.5,0.25\n1,0,0,0.5,0.5\n0,0,0,0.1,0.2\n";
        let set = read_trajectories(text.as_bytes()).unwrap();
        assert_eq!(set.skills[&1][&0], vec![vec![0.5, 0.5], vec![0.5, 0.25]]);
        let mut buf = Vec::new();
        write_trajectories(&set, &mut buf).unwrap();
        assert_eq!(read_trajectories(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn errors_name_the_row() {
        let text = "skill,rollout,t,x,y\n0,0,0,0.1,0.2\n0,0,1,oops,0.2\n";
        let err = read_trajectories(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        let dup = "skill,rollout,t,x,y\n0,0,0,0.1,0.2\n0,0,0,0.3,0.2\n";
        assert!(read_trajectories(dup.as_bytes()).unwrap_err().to_string().contains("row 3"));
        assert!(read_trajectories("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn gaps_in_skill_ids_are_rejected() {
        let text = "skill,rollout,t,x,y\n0,0,0,0.1,0.2\n2,0,0,0.1,0.2\n";
        assert!(read_trajectories(text.as_bytes()).unwrap().to_samples().is_err());
    }
}
