use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::tensor::{derive_seed, seeded, FeatureMap, GridShape};
use crate::{Error, Result};

/// Motion class of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The class obtained by playing a clip backwards.
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

/// One `[1, T, H, W, 2]` clip: bar intensity plus a constant bias channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub data: FeatureMap<f64>,
    pub label: Direction,
    /// Shared by a clip and its time reversal.
    pub pair: usize,
}

pub const INPUT_CHANNELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub per_class: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            per_class: 200,
            time: 8,
            height: 16,
            width: 16,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time < 4 {
            return Err(Error::config(format!("clip length {} below 4 frames", self.time)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config(format!("frame {}x{} below 8x8", self.height, self.width)));
        }
        if self.per_class == 0 {
            return Err(Error::config("per_class must be positive"));
        }
        // a one-pixel bar moving one pixel per frame must stay in frame
        if self.height < self.time || self.width < self.time {
            return Err(Error::config(format!(
                "{} frames do not fit a {}x{} frame without wraparound",
                self.time, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridShape {
        GridShape::new(1, self.time, self.height, self.width, INPUT_CHANNELS)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Clip>,
    pub test: Vec<Clip>,
}

impl Dataset {
    pub fn clips(&self) -> impl Iterator<Item = &Clip> {
        self.train.iter().chain(&self.test)
    }
}

/// A bar moving toward lower row (`Up`) or column (`Left`) indices, one
/// pixel per frame.
fn moving_bar(cfg: &DatasetConfig, vertical_motion: bool, rng: &mut impl rand::Rng) -> FeatureMap<f64> {
    let (along, across) = if vertical_motion {
        (cfg.height, cfg.width)
    } else {
        (cfg.width, cfg.height)
    };
    let max_thick = (along + 1 - cfg.time).min(3);
    let thick = rng.random_range(1..=max_thick);
    let start = rng.random_range(cfg.time - 1..=along - thick);
    let len = rng.random_range(across.div_ceil(2)..=across);
    let offset = rng.random_range(0..=across - len);
    FeatureMap::from_fn(cfg.grid(), |_, t, h, w, c| {
        if c == 1 {
            return 1.0;
        }
        let (a, b) = if vertical_motion { (h, w) } else { (w, h) };
        let lead = start - t;
        let on = (lead..lead + thick).contains(&a) && (offset..offset + len).contains(&b);
        if on {
            1.0
        } else {
            0.0
        }
    })
    .expect("generated clip is finite")
}

/// Moving-bar clips, `per_class` per direction, split 80/20 by reversal pair
/// so both members of a pair land on the same side.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let n_train = match cfg.per_class {
        1 => 1,
        n => ((n * 4 + 2) / 5).clamp(1, n - 1),
    };
    for (axis, (fwd, back)) in [(Direction::Up, Direction::Down), (Direction::Left, Direction::Right)]
        .into_iter()
        .enumerate()
    {
        let mut rng = seeded(derive_seed(cfg.seed, axis as u64));
        let mut pairs: Vec<(Clip, Clip)> = (0..cfg.per_class)
            .map(|i| {
                let data = moving_bar(cfg, fwd == Direction::Up, &mut rng);
                let pair = axis * cfg.per_class + i;
                let rev = data.reverse_time();
                (
                    Clip { data, label: fwd, pair },
                    Clip {
                        data: rev,
                        label: back,
                        pair,
                    },
                )
            })
            .collect();
        pairs.shuffle(&mut rng);
        for (i, (a, b)) in pairs.into_iter().enumerate() {
            let dst = if i < n_train { &mut train } else { &mut test };
            dst.push(a);
            dst.push(b);
        }
    }
    Ok(Dataset {
        config: *cfg,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            seed: 3,
            per_class: 10,
            time: 4,
            height: 8,
            width: 8,
        }
    }

    #[test]
    fn pairs_are_exact_reversals() {
        let d = gen_dataset(&small()).unwrap();
        for c in d.clips() {
            let partner = d
                .clips()
                .find(|o| o.pair == c.pair && o.label == c.label.reversed())
                .unwrap();
            assert_eq!(c.data.reverse_time().data(), partner.data.data());
        }
    }

    #[test]
    fn classes_are_balanced() {
        let d = gen_dataset(&small()).unwrap();
        for dir in Direction::ALL {
            assert_eq!(d.clips().filter(|c| c.label == dir).count(), 10);
            assert_eq!(d.train.iter().filter(|c| c.label == dir).count(), 8);
        }
    }

    #[test]
    fn bars_move_one_pixel_per_frame() {
        let d = gen_dataset(&small()).unwrap();
        let clip = d.clips().find(|c| c.label == Direction::Up).unwrap();
        let rows_on = |t: usize| {
            (0..8)
                .filter(|&h| (0..8).any(|w| clip.data.data()[(t * 64 + h * 8 + w) * 2] == 1.0))
                .min()
                .unwrap()
        };
        for t in 1..4 {
            assert_eq!(rows_on(t), rows_on(t - 1) - 1);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(gen_dataset(&small()).unwrap(), gen_dataset(&small()).unwrap());
    }

    #[test]
    fn wraparound_geometry_is_rejected() {
        let cfg = DatasetConfig { time: 12, ..small() };
        assert!(matches!(gen_dataset(&cfg), Err(Error::Config(_))));
        assert!(gen_dataset(&DatasetConfig {
            per_class: 0,
            ..small()
        })
        .is_err());
        assert!(gen_dataset(&DatasetConfig { height: 6, ..small() }).is_err());
    }
}
