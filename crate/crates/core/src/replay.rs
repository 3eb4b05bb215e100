//! Fixed-capacity FIFO replay buffer of raw depth transitions.

use rand::Rng;

use crate::error::{CoreError, Result};

/// One UAV step. Depth readings are stored in meters as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub depth: Vec<f32>,
    pub goal: [f64; 3],
    pub velocity: [f64; 3],
    /// Command actually sent to the simulator.
    pub action: [f64; 3],
    pub reward: f64,
    pub next_depth: Vec<f32>,
    pub next_goal: [f64; 3],
    pub next_velocity: [f64; 3],
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    pixels: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, pixels: usize) -> Result<Self> {
        if capacity == 0 || pixels == 0 {
            return Err(CoreError::Config("replay buffer needs positive capacity and image size".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            pixels,
            items: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.depth.len() != self.pixels || t.next_depth.len() != self.pixels {
            return Err(CoreError::Dimension(format!(
                "transition images have {} and {} pixels, buffer holds {}",
                t.depth.len(),
                t.next_depth.len(),
                self.pixels
            )));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < batch || batch == 0 {
            return Err(CoreError::NotReady {
                have: self.items.len(),
                need: batch.max(1),
            });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }

    /// Rebuilds a buffer from its ordered contents, e.g. after loading.
    pub fn from_parts(capacity: usize, pixels: usize, items: Vec<Transition>, cursor: usize) -> Result<Self> {
        if items.len() > capacity || cursor >= capacity.max(1) {
            return Err(CoreError::Integrity("replay buffer state is inconsistent".into()));
        }
        let mut b = ReplayBuffer::new(capacity, pixels)?;
        for t in &items {
            if t.depth.len() != pixels || t.next_depth.len() != pixels {
                return Err(CoreError::Integrity("replay image size mismatch".into()));
            }
        }
        b.items = items;
        b.cursor = cursor;
        Ok(b)
    }

    /// Storage order (not age order), with the cursor.
    pub fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.items, self.cursor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        Transition {
            depth: vec![1.0; 4],
            goal: [0.0; 3],
            velocity: [0.0; 3],
            action: [1.0, 0.0, 0.0],
            reward: r,
            next_depth: vec![1.0; 4],
            next_goal: [0.0; 3],
            next_velocity: [0.0; 3],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(3, 4).unwrap();
        for r in 0..4 {
            b.push(tr(r as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter_ordered().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sampling_needs_enough_items() {
        let mut b = ReplayBuffer::new(10, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.push(tr(0.0)).unwrap();
        assert!(matches!(b.sample(2, &mut rng), Err(CoreError::NotReady { have: 1, need: 2 })));
        assert!(b.push(Transition { depth: vec![0.0; 3], ..tr(0.0) }).is_err());
    }
}
