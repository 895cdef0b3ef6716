use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MeasureError;

macro_rules! measure_ids {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The 24 generalization measures. Names key the record schema and
        /// never change.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum MeasureId {
            $($variant),+
        }

        impl MeasureId {
            pub const ALL: [MeasureId; 24] = [$(MeasureId::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(MeasureId::$variant => $name),+
                }
            }
        }

        impl FromStr for MeasureId {
            type Err = MeasureError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(MeasureId::$variant),)+
                    other => Err(MeasureError::UnknownMeasure(other.to_string())),
                }
            }
        }
    };
}

measure_ids! {
    Params => "params",
    InverseMargin => "inverse.margin",
    LogSpecInitMain => "log.spec.init.main",
    LogSpecOrigMain => "log.spec.orig.main",
    LogProdOfSpecOverMargin => "log.prod.of.spec.over.margin",
    LogProdOfSpec => "log.prod.of.spec",
    FroOverSpec => "fro.over.spec",
    LogSumOfSpecOverMargin => "log.sum.of.spec.over.margin",
    LogSumOfSpec => "log.sum.of.spec",
    LogProdOfFroOverMargin => "log.prod.of.fro.over.margin",
    LogProdOfFro => "log.prod.of.fro",
    LogSumOfFroOverMargin => "log.sum.of.fro.over.margin",
    LogSumOfFro => "log.sum.of.fro",
    FroDist => "fro.dist",
    DistSpecInit => "dist.spec.init",
    ParamNorm => "param.norm",
    PathNormOverMargin => "path.norm.over.margin",
    PathNorm => "path.norm",
    PacbayesInit => "pacbayes.init",
    PacbayesOrig => "pacbayes.orig",
    PacbayesFlatness => "pacbayes.flatness",
    PacbayesMagInit => "pacbayes.mag.init",
    PacbayesMagOrig => "pacbayes.mag.orig",
    PacbayesMagFlatness => "pacbayes.mag.flatness",
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for MeasureId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MeasureId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Measure values keyed by id; `None` marks a measure that is undefined for
/// the record (for example a margin-normalized measure with `gamma <= 0`).
pub type MeasureVector = BTreeMap<MeasureId, Option<f64>>;
