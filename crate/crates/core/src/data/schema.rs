use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical customer feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub cardinality: usize,
    /// Width of this feature's embedding row.
    pub width: usize,
}

impl FeatureSpec {
    pub fn new(name: &str, cardinality: usize, width: usize) -> Self {
        Self {
            name: name.to_string(),
            cardinality,
            width,
        }
    }
}

/// Ordered list of context features; the context vector is the
/// concatenation of their embedding rows in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSchema {
    pub features: Vec<FeatureSpec>,
}

impl ContextSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Self {
        Self { features }
    }

    /// Three features of cardinality 8, each embedded in 16 dimensions.
    pub fn desk() -> Self {
        Self::new(vec![
            FeatureSpec::new("segment", 8, 16),
            FeatureSpec::new("region", 8, 16),
            FeatureSpec::new("occasion", 8, 16),
        ])
    }

    /// Ten customer features whose widths add up to 736.
    pub fn paper() -> Self {
        Self::new(vec![
            FeatureSpec::new("age", 10, 16),
            FeatureSpec::new("gender", 3, 8),
            FeatureSpec::new("country", 20, 16),
            FeatureSpec::new("brands", 500, 128),
            FeatureSpec::new("colors", 40, 64),
            FeatureSpec::new("styles", 60, 128),
            FeatureSpec::new("no_go_types", 80, 64),
            FeatureSpec::new("sizes", 120, 128),
            FeatureSpec::new("price", 12, 64),
            FeatureSpec::new("occasion", 30, 120),
        ])
    }

    pub fn d_context(&self) -> usize {
        self.features.iter().map(|f| f.width).sum()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Config("context schema has no features".into()));
        }
        for f in &self.features {
            if f.cardinality == 0 || f.width == 0 {
                return Err(Error::Config(format!(
                    "feature {} needs positive cardinality and width",
                    f.name
                )));
            }
        }
        Ok(())
    }

    /// Checks one value per feature, each below its cardinality.
    pub fn check_values(&self, values: &[usize]) -> Result<()> {
        if values.len() != self.features.len() {
            return Err(Error::Data(format!(
                "expected {} context values, got {}",
                self.features.len(),
                values.len()
            )));
        }
        for (f, &v) in self.features.iter().zip(values) {
            if v >= f.cardinality {
                return Err(Error::Data(format!(
                    "value {v} out of range for feature {} (cardinality {})",
                    f.name, f.cardinality
                )));
            }
        }
        Ok(())
    }
}
