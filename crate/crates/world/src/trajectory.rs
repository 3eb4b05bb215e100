//! Streaming CSV trajectory log, one row per moving UAV per step.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::sim::{StepOutcome, World};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub step: usize,
    pub uav: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vz: f64,
    #[serde(rename = "vω")]
    pub vw: f64,
    pub reward: f64,
    pub d_min: f64,
    pub d_goal: f64,
    pub event: String,
}

pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        TrajectoryWriter {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn write_row(&mut self, row: &TrajectoryRow) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    /// Step 0 rows: initial poses, no reward.
    pub fn record_reset(&mut self, episode: usize, world: &World) -> Result<()> {
        for (i, u) in world.uavs().iter().enumerate() {
            self.write_row(&TrajectoryRow {
                episode,
                step: 0,
                uav: i,
                x: u.position.x,
                y: u.position.y,
                z: u.position.z,
                yaw: u.yaw,
                vx: 0.0,
                vz: 0.0,
                vw: 0.0,
                reward: 0.0,
                d_min: world.min_obstacle_distance(i),
                d_goal: u.distance_to_goal(),
                event: "start".into(),
            })?;
        }
        Ok(())
    }

    /// Rows for the UAVs that moved in the step just taken.
    pub fn record_step(&mut self, episode: usize, world: &World, outcome: &StepOutcome) -> Result<()> {
        for (i, (u, info)) in world.uavs().iter().zip(&outcome.info).enumerate() {
            if !info.active {
                continue;
            }
            self.write_row(&TrajectoryRow {
                episode,
                step: world.steps(),
                uav: i,
                x: u.position.x,
                y: u.position.y,
                z: u.position.z,
                yaw: u.yaw,
                vx: u.velocity[0],
                vz: u.velocity[1],
                vw: u.velocity[2],
                reward: outcome.rewards[i],
                d_min: info.d_min,
                d_goal: info.d_t,
                event: info.event.name().into(),
            })?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()).into())
    }
}
