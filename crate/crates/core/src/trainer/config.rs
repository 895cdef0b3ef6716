use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainerError;

/// The five hyperparameter axes a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    LearningRate,
    Depth,
    Width,
    Dataset,
    TrainSize,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::LearningRate,
        Axis::Depth,
        Axis::Width,
        Axis::Dataset,
        Axis::TrainSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::LearningRate => "lr",
            Axis::Depth => "depth",
            Axis::Width => "width",
            Axis::Dataset => "dataset",
            Axis::TrainSize => "train_size",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = TrainerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" | "learning_rate" => Ok(Axis::LearningRate),
            "depth" => Ok(Axis::Depth),
            "width" => Ok(Axis::Width),
            "dataset" => Ok(Axis::Dataset),
            "train_size" | "size" => Ok(Axis::TrainSize),
            other => Err(TrainerError::Config(format!("unknown axis `{other}`"))),
        }
    }
}

/// Value of one hyperparameter. Floats compare by total order so that
/// configurations are hashable and sortable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(usize),
    Float(f64),
    Text(String),
}

impl AxisValue {
    fn rank(&self) -> u8 {
        match self {
            AxisValue::Int(_) => 0,
            AxisValue::Float(_) => 1,
            AxisValue::Text(_) => 2,
        }
    }
}

impl PartialEq for AxisValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for AxisValue {}

impl PartialOrd for AxisValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AxisValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (AxisValue::Int(a), AxisValue::Int(b)) => a.cmp(b),
            (AxisValue::Float(a), AxisValue::Float(b)) => a.total_cmp(b),
            (AxisValue::Text(a), AxisValue::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for AxisValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            AxisValue::Int(v) => v.hash(state),
            AxisValue::Float(v) => v.to_bits().hash(state),
            AxisValue::Text(v) => v.hash(state),
        }
    }
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Int(v) => write!(f, "{v}"),
            AxisValue::Float(v) => write!(f, "{v}"),
            AxisValue::Text(v) => f.write_str(v),
        }
    }
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperparameterConfig {
    pub learning_rate: f64,
    pub depth: usize,
    pub width: usize,
    pub dataset: String,
    pub train_size: usize,
}

impl HyperparameterConfig {
    pub fn value(&self, axis: Axis) -> AxisValue {
        match axis {
            Axis::LearningRate => AxisValue::Float(self.learning_rate),
            Axis::Depth => AxisValue::Int(self.depth),
            Axis::Width => AxisValue::Int(self.width),
            Axis::Dataset => AxisValue::Text(self.dataset.clone()),
            Axis::TrainSize => AxisValue::Int(self.train_size),
        }
    }

    fn key(&self) -> [AxisValue; 5] {
        Axis::ALL.map(|a| self.value(a))
    }

    /// Axes on which the two configurations disagree.
    pub fn differing_axes(&self, other: &Self) -> Vec<Axis> {
        Axis::ALL
            .into_iter()
            .filter(|&a| self.value(a) != other.value(a))
            .collect()
    }

    /// Canonical identifier, e.g. `lr=0.01,depth=2,width=8,dataset=teacher,train_size=64`.
    pub fn id(&self) -> String {
        Axis::ALL
            .iter()
            .map(|a| format!("{}={}", a.name(), self.value(*a)))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Identifier with one axis masked out; configs sharing it differ at most
    /// on that axis.
    pub fn id_without(&self, axis: Axis) -> String {
        Axis::ALL
            .iter()
            .filter(|&&a| a != axis)
            .map(|a| format!("{}={}", a.name(), self.value(*a)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl PartialEq for HyperparameterConfig {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for HyperparameterConfig {}

impl Hash for HyperparameterConfig {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for HyperparameterConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HyperparameterConfig {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Declared axis values of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rate: Vec<f64>,
    pub depth: Vec<usize>,
    pub width: Vec<usize>,
    pub dataset: Vec<String>,
    pub train_size: Vec<usize>,
}

impl Grid {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let empty = [
            ("learning_rate", self.learning_rate.is_empty()),
            ("depth", self.depth.is_empty()),
            ("width", self.width.is_empty()),
            ("dataset", self.dataset.is_empty()),
            ("train_size", self.train_size.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(TrainerError::Config(format!("grid axis `{name}` has no values")));
        }
        if self.learning_rate.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(TrainerError::Config("learning rates must be positive".into()));
        }
        if self.depth.contains(&0) || self.width.contains(&0) || self.train_size.contains(&0) {
            return Err(TrainerError::Config(
                "depth, width and train_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Cartesian product in declaration order (learning rate outermost).
    pub fn configs(&self) -> Vec<HyperparameterConfig> {
        let mut out = Vec::new();
        for &lr in &self.learning_rate {
            for &depth in &self.depth {
                for &width in &self.width {
                    for ds in &self.dataset {
                        for &n in &self.train_size {
                            out.push(HyperparameterConfig {
                                learning_rate: lr,
                                depth,
                                width,
                                dataset: ds.clone(),
                                train_size: n,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn contains(&self, c: &HyperparameterConfig) -> bool {
        self.learning_rate.iter().any(|v| v.to_bits() == c.learning_rate.to_bits())
            && self.depth.contains(&c.depth)
            && self.width.contains(&c.width)
            && self.dataset.contains(&c.dataset)
            && self.train_size.contains(&c.train_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn cfg(lr: f64, depth: usize) -> HyperparameterConfig {
        HyperparameterConfig {
            learning_rate: lr,
            depth,
            width: 8,
            dataset: "teacher".into(),
            train_size: 64,
        }
    }

    #[test]
    fn differing_axes_is_decidable() {
        assert_eq!(cfg(0.1, 2).differing_axes(&cfg(0.1, 3)), vec![Axis::Depth]);
        assert_eq!(
            cfg(0.1, 2).differing_axes(&cfg(0.2, 3)),
            vec![Axis::LearningRate, Axis::Depth]
        );
        assert!(cfg(0.1, 2).differing_axes(&cfg(0.1, 2)).is_empty());
    }

    #[test]
    fn configs_hash_and_id() {
        let set: HashSet<_> = [cfg(0.1, 2), cfg(0.1, 2), cfg(0.1, 3)].into_iter().collect();
        assert_eq!(set.len(), 2);
        assert_eq!(cfg(0.01, 2).id(), "lr=0.01,depth=2,width=8,dataset=teacher,train_size=64");
        assert_eq!(cfg(0.01, 2).id_without(Axis::Depth), cfg(0.01, 5).id_without(Axis::Depth));
    }

    #[test]
    fn grid_product_and_validation() {
        let g = Grid {
            learning_rate: vec![0.1, 0.2],
            depth: vec![2, 3],
            width: vec![8],
            dataset: vec!["teacher".into()],
            train_size: vec![64],
        };
        g.validate().unwrap();
        let cs = g.configs();
        assert_eq!(cs.len(), 4);
        assert!(cs.iter().all(|c| g.contains(c)));
        let bad = Grid {
            depth: vec![],
            ..g
        };
        assert!(bad.validate().is_err());
    }
}
