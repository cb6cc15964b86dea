//! Feature schema, design rows, observation masks and the assembly graph.
//!
//! Every other module consumes these types. A design row is an ordered
//! vector of [`Value`]s aligned with the schema's feature list; missing
//! cells carry the explicit [`Value::Missing`] tag, never a numeric stand-in.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Numeric { lo: f64, hi: f64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub component: String,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>, lo: f64, hi: f64, component: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric { lo, hi },
            component: component.into(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
        component: impl Into<String>,
    ) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
            component: component.into(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, FeatureKind::Numeric { .. })
    }

    /// `(lo, hi)` for numeric features.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self.kind {
            FeatureKind::Numeric { lo, hi } => Some((lo, hi)),
            FeatureKind::Categorical { .. } => None,
        }
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { categories } => Some(categories),
            FeatureKind::Numeric { .. } => None,
        }
    }

    /// Number of categories, or 0 for numeric features.
    pub fn cardinality(&self) -> usize {
        self.categories().map_or(0, <[String]>::len)
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories()?.iter().position(|c| c == label)
    }

    /// Min-max normalization into `[0, 1]` by the declared range.
    pub fn normalize(&self, v: f64) -> f64 {
        let (lo, hi) = self.range().expect("normalize on categorical feature");
        (v - lo) / (hi - lo)
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        let (lo, hi) = self.range().expect("denormalize on categorical feature");
        lo + u * (hi - lo)
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            FeatureKind::Numeric { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Schema(format!(
                        "feature '{}' has invalid range [{lo}, {hi}]",
                        self.name
                    )));
                }
            }
            FeatureKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "feature '{}' has an empty category list",
                        self.name
                    )));
                }
                let distinct: BTreeSet<&String> = categories.iter().collect();
                if categories.len() < 2 || distinct.len() != categories.len() {
                    return Err(Error::Schema(format!(
                        "feature '{}' needs at least two distinct categories",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that an observed value is admissible for this feature.
    pub fn check_value(&self, value: &Value) -> std::result::Result<(), String> {
        match (&self.kind, value) {
            (FeatureKind::Numeric { lo, hi }, Value::Num(v)) => {
                if v.is_finite() && *v >= *lo && *v <= *hi {
                    Ok(())
                } else {
                    Err(format!("value {v} outside range [{lo}, {hi}]"))
                }
            }
            (FeatureKind::Categorical { categories }, Value::Cat(label)) => {
                if categories.iter().any(|c| c == label) {
                    Ok(())
                } else {
                    Err(format!("unknown category '{label}'"))
                }
            }
            (_, Value::Missing) => Err("missing value".to_string()),
            (FeatureKind::Numeric { .. }, Value::Cat(label)) => {
                Err(format!("expected a number, found '{label}'"))
            }
            (FeatureKind::Categorical { .. }, Value::Num(v)) => {
                Err(format!("expected a category label, found {v}"))
            }
        }
    }

    /// Parses a text cell (CSV or form input). Empty text is missing.
    pub fn parse_cell(&self, text: &str) -> std::result::Result<Value, String> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Value::Missing);
        }
        let value = match self.kind {
            FeatureKind::Numeric { .. } => Value::Num(
                text.parse::<f64>()
                    .map_err(|_| format!("cannot parse '{text}' as a number"))?,
            ),
            FeatureKind::Categorical { .. } => Value::Cat(text.to_string()),
        };
        self.check_value(&value)?;
        Ok(value)
    }
}

/// Ordered feature declarations partitioned into components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    components: Vec<String>,
    component_index: Vec<Vec<usize>>,
    feature_component: Vec<usize>,
    by_name: HashMap<String, usize>,
}

impl FeatureSchema {
    pub fn new(components: Vec<String>, features: Vec<FeatureSpec>) -> Result<Self> {
        let mut comp_pos = HashMap::new();
        for (i, c) in components.iter().enumerate() {
            if comp_pos.insert(c.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate component '{c}'")));
            }
        }
        if features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        let mut by_name = HashMap::new();
        let mut component_index = vec![Vec::new(); components.len()];
        let mut feature_component = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            f.validate()?;
            if by_name.insert(f.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate feature name '{}'", f.name)));
            }
            let c = *comp_pos.get(&f.component).ok_or_else(|| {
                Error::Schema(format!(
                    "feature '{}' references undeclared component '{}'",
                    f.name, f.component
                ))
            })?;
            component_index[c].push(i);
            feature_component.push(c);
        }
        if let Some((c, _)) = component_index.iter().enumerate().find(|(_, v)| v.is_empty()) {
            return Err(Error::Schema(format!(
                "component '{}' has no features",
                components[c]
            )));
        }
        Ok(FeatureSchema {
            features,
            components,
            component_index,
            feature_component,
            by_name,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// Total feature count `D`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &FeatureSpec {
        &self.features[i]
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn component_position(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c == name)
    }

    /// Feature positions belonging to component `c`, in schema order.
    pub fn component_features(&self, c: usize) -> &[usize] {
        &self.component_index[c]
    }

    /// Component position of feature `i`.
    pub fn component_of(&self, i: usize) -> usize {
        self.feature_component[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn numeric_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_numeric())
            .map(|(i, _)| i)
    }

    pub fn categorical_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.is_numeric())
            .map(|(i, _)| i)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    components: Vec<String>,
    features: Vec<FeatureSpecFile>,
}

#[derive(Serialize, Deserialize)]
struct FeatureSpecFile {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    component: String,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Numeric,
    Categorical,
}

impl TryFrom<SchemaFile> for FeatureSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        let features = file
            .features
            .into_iter()
            .map(|f| {
                let kind = match (f.kind, f.range, f.categories) {
                    (KindTag::Numeric, Some([lo, hi]), None) => FeatureKind::Numeric { lo, hi },
                    (KindTag::Categorical, None, Some(categories)) => {
                        FeatureKind::Categorical { categories }
                    }
                    (KindTag::Numeric, _, _) => {
                        return Err(Error::Schema(format!(
                            "numeric feature '{}' must declare exactly a range",
                            f.name
                        )))
                    }
                    (KindTag::Categorical, _, _) => {
                        return Err(Error::Schema(format!(
                            "categorical feature '{}' must declare exactly a category list",
                            f.name
                        )))
                    }
                };
                Ok(FeatureSpec {
                    name: f.name,
                    kind,
                    component: f.component,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSchema::new(file.components, features)
    }
}

impl From<FeatureSchema> for SchemaFile {
    fn from(schema: FeatureSchema) -> Self {
        SchemaFile {
            components: schema.components,
            features: schema
                .features
                .into_iter()
                .map(|f| match f.kind {
                    FeatureKind::Numeric { lo, hi } => FeatureSpecFile {
                        name: f.name,
                        kind: KindTag::Numeric,
                        range: Some([lo, hi]),
                        categories: None,
                        component: f.component,
                    },
                    FeatureKind::Categorical { categories } => FeatureSpecFile {
                        name: f.name,
                        kind: KindTag::Categorical,
                        range: None,
                        categories: Some(categories),
                        component: f.component,
                    },
                })
                .collect(),
        }
    }
}

/// A single cell of a design row.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(c) => Some(c),
            _ => None,
        }
    }

    /// Exact equality, comparing numbers bitwise.
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.to_bits() == b.to_bits(),
            (a, b) => a == b,
        }
    }
}

impl fmt::Display for Value {
    /// CSV cell text; numbers use the shortest representation that parses back exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(c) => f.write_str(c),
            Value::Missing => Ok(()),
        }
    }
}

/// Observed (`true`) / missing (`false`) flag per feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationMask(Vec<bool>);

impl ObservationMask {
    pub fn new(observed: Vec<bool>) -> Self {
        ObservationMask(observed)
    }

    pub fn all_observed(d: usize) -> Self {
        ObservationMask(vec![true; d])
    }

    pub fn all_missing(d: usize) -> Self {
        ObservationMask(vec![false; d])
    }

    /// Mask with the given positions hidden.
    pub fn hiding(d: usize, hidden: &[usize]) -> Self {
        let mut m = vec![true; d];
        for &i in hidden {
            m[i] = false;
        }
        ObservationMask(m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn missing(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, o)| !**o).map(|(i, _)| i)
    }

    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, o)| **o).map(|(i, _)| i)
    }

    pub fn missing_count(&self) -> usize {
        self.0.iter().filter(|o| !**o).count()
    }
}

fn check_len(schema: &FeatureSchema, n: usize) -> Result<()> {
    if n != schema.len() {
        return Err(Error::Design(format!(
            "row has {n} values, schema declares {}",
            schema.len()
        )));
    }
    Ok(())
}

/// A design with some features possibly missing.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDesign {
    values: Vec<Value>,
    mask: ObservationMask,
}

impl PartialDesign {
    /// Validates `values` against the schema; the mask is derived from the missing tags.
    pub fn new(schema: &FeatureSchema, values: Vec<Value>) -> Result<Self> {
        check_len(schema, values.len())?;
        for (i, v) in values.iter().enumerate() {
            if !v.is_missing() {
                let f = schema.feature(i);
                f.check_value(v)
                    .map_err(|m| Error::Design(format!("feature '{}': {m}", f.name)))?;
            }
        }
        let mask = ObservationMask(values.iter().map(|v| !v.is_missing()).collect());
        Ok(PartialDesign { values, mask })
    }

    /// Builds from a name → value mapping; absent names are missing.
    pub fn from_named<'a, I>(schema: &FeatureSchema, named: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, Value)>,
    {
        let mut values = vec![Value::Missing; schema.len()];
        for (name, v) in named {
            let i = schema
                .index_of(name)
                .ok_or_else(|| Error::Design(format!("unknown feature '{name}'")))?;
            values[i] = v;
        }
        Self::new(schema, values)
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &Value {
        &self.values[i]
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fills every missing slot from `fill` and validates the result.
    pub fn complete_with(
        &self,
        schema: &FeatureSchema,
        mut fill: impl FnMut(usize) -> Value,
    ) -> Result<CompleteDesign> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| if v.is_missing() { fill(i) } else { v.clone() })
            .collect();
        CompleteDesign::new(schema, values)
    }
}

/// A fully specified design.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteDesign {
    values: Vec<Value>,
}

impl CompleteDesign {
    pub fn new(schema: &FeatureSchema, values: Vec<Value>) -> Result<Self> {
        check_len(schema, values.len())?;
        for (i, v) in values.iter().enumerate() {
            let f = schema.feature(i);
            f.check_value(v)
                .map_err(|m| Error::Design(format!("feature '{}': {m}", f.name)))?;
        }
        Ok(CompleteDesign { values })
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &Value {
        &self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<Value> {
        self.values
    }

    pub fn to_partial(&self) -> PartialDesign {
        PartialDesign {
            values: self.values.clone(),
            mask: ObservationMask::all_observed(self.values.len()),
        }
    }

    pub fn bit_eq(&self, other: &CompleteDesign) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.bit_eq(b))
    }
}

/// Hides the mask-false positions of a complete design.
pub fn apply_mask(design: &CompleteDesign, mask: &ObservationMask) -> Result<PartialDesign> {
    if mask.len() != design.len() {
        return Err(Error::Design(format!(
            "mask length {} does not match design length {}",
            mask.len(),
            design.len()
        )));
    }
    let values = design
        .values
        .iter()
        .zip(mask.as_slice())
        .map(|(v, &obs)| if obs { v.clone() } else { Value::Missing })
        .collect();
    Ok(PartialDesign {
        values,
        mask: mask.clone(),
    })
}

/// Components as nodes, physical connections as undirected edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyGraph {
    schema: Arc<FeatureSchema>,
    nodes: Vec<String>,
    node_component: Vec<usize>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<[String; 2]>,
}

impl AssemblyGraph {
    pub fn new(
        schema: Arc<FeatureSchema>,
        nodes: Vec<String>,
        edges: &[(String, String)],
    ) -> Result<Self> {
        let mut pos = HashMap::new();
        let mut node_component = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if pos.insert(n.as_str(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node '{n}'")));
            }
            let c = schema
                .component_position(n)
                .ok_or_else(|| Error::Graph(format!("node '{n}' is not a schema component")))?;
            node_component.push(c);
        }
        if nodes.len() != schema.components().len() {
            let missing: Vec<&str> = schema
                .components()
                .iter()
                .filter(|c| !pos.contains_key(c.as_str()))
                .map(String::as_str)
                .collect();
            return Err(Error::Graph(format!(
                "node set does not match schema components; missing {missing:?}"
            )));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            let ia = *pos
                .get(a.as_str())
                .ok_or_else(|| Error::Graph(format!("edge endpoint '{a}' is not a component")))?;
            let ib = *pos
                .get(b.as_str())
                .ok_or_else(|| Error::Graph(format!("edge endpoint '{b}' is not a component")))?;
            if ia == ib {
                return Err(Error::Graph(format!("self-loop on '{a}'")));
            }
            set.insert((ia.min(ib), ia.max(ib)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Ok(AssemblyGraph {
            schema,
            nodes,
            node_component,
            edges,
            neighbors,
        })
    }

    pub fn load(path: impl AsRef<Path>, schema: Arc<FeatureSchema>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, schema)
    }

    pub fn from_json(text: &str, schema: Arc<FeatureSchema>) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let edges: Vec<(String, String)> =
            file.edges.into_iter().map(|[a, b]| (a, b)).collect();
        Self::new(schema, file.nodes, &edges)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| [self.nodes[a].clone(), self.nodes[b].clone()])
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    /// Graph with no edges over the schema's components, in schema order.
    pub fn edgeless(schema: Arc<FeatureSchema>) -> Self {
        let nodes = schema.components().to_vec();
        Self::new(schema, nodes, &[]).expect("schema components form valid nodes")
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Schema component position of node `n`.
    pub fn node_component(&self, n: usize) -> usize {
        self.node_component[n]
    }

    /// Undirected edges as node-index pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.nodes[a].clone(), self.nodes[b].clone()))
            .collect()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }

    pub fn degree(&self, n: usize) -> usize {
        self.neighbors[n].len()
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &self.neighbors[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_numeric() -> FeatureSchema {
        let features = (0..10)
            .map(|i| FeatureSpec::numeric(format!("f{i}"), 0.0, 10.0, "A"))
            .collect();
        FeatureSchema::new(vec!["A".into()], features).unwrap()
    }

    #[test]
    fn minimal_schema_has_one_node() {
        let text = r#"{"components":["A"],"features":[{"name":"x","kind":"numeric","range":[0,1],"component":"A"}]}"#;
        let schema = Arc::new(FeatureSchema::from_json(text).unwrap());
        assert_eq!(schema.len(), 1);
        let g = AssemblyGraph::edgeless(schema);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn schema_rejects_undeclared_component() {
        let text = r#"{"components":["A"],"features":[{"name":"x","kind":"numeric","range":[0,1],"component":"B"}]}"#;
        let err = FeatureSchema::from_json(text).unwrap_err();
        assert!(err.to_string().contains("undeclared component"), "{err}");
    }

    #[test]
    fn schema_rejects_duplicates_and_empty_categories() {
        let dup = r#"{"components":["A"],"features":[
            {"name":"x","kind":"numeric","range":[0,1],"component":"A"},
            {"name":"x","kind":"numeric","range":[0,1],"component":"A"}]}"#;
        assert!(FeatureSchema::from_json(dup).is_err());
        let empty = r#"{"components":["A"],"features":[
            {"name":"c","kind":"categorical","categories":[],"component":"A"}]}"#;
        assert!(FeatureSchema::from_json(empty)
            .unwrap_err()
            .to_string()
            .contains("empty category list"));
        let bad_range = r#"{"components":["A"],"features":[
            {"name":"x","kind":"numeric","range":[1,1],"component":"A"}]}"#;
        assert!(FeatureSchema::from_json(bad_range).is_err());
        assert!(FeatureSchema::from_json("{not json").is_err());
    }

    #[test]
    fn graph_validation() {
        let schema = Arc::new(
            FeatureSchema::new(
                vec!["A".into(), "B".into()],
                vec![
                    FeatureSpec::numeric("a", 0.0, 1.0, "A"),
                    FeatureSpec::numeric("b", 0.0, 1.0, "B"),
                ],
            )
            .unwrap(),
        );
        let g = AssemblyGraph::from_json(
            r#"{"nodes":["A","B"],"edges":[["A","B"]]}"#,
            schema.clone(),
        )
        .unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(g.is_connected());

        let unknown =
            AssemblyGraph::from_json(r#"{"nodes":["A","B"],"edges":[["A","C"]]}"#, schema.clone());
        assert!(unknown.unwrap_err().to_string().contains("'C'"));
        let self_loop =
            AssemblyGraph::from_json(r#"{"nodes":["A","B"],"edges":[["A","A"]]}"#, schema.clone());
        assert!(self_loop.unwrap_err().to_string().contains("self-loop"));
        let mismatch = AssemblyGraph::from_json(r#"{"nodes":["A"],"edges":[]}"#, schema);
        assert!(mismatch.is_err());
    }

    #[test]
    fn apply_mask_positions() {
        let schema = ten_numeric();
        let design =
            CompleteDesign::new(&schema, (0..10).map(|i| Value::Num(i as f64)).collect()).unwrap();

        let same = apply_mask(&design, &ObservationMask::all_observed(10)).unwrap();
        assert_eq!(same, design.to_partial());

        let none = apply_mask(&design, &ObservationMask::all_missing(10)).unwrap();
        assert!(none.values().iter().all(Value::is_missing));

        let m = ObservationMask::hiding(10, &[3, 7]);
        let p = apply_mask(&design, &m).unwrap();
        let sentinels: Vec<usize> = (0..10).filter(|&i| p.value(i).is_missing()).collect();
        assert_eq!(sentinels, vec![3, 7]);
        for i in m.observed() {
            assert!(p.value(i).bit_eq(design.value(i)));
        }

        assert!(apply_mask(&design, &ObservationMask::all_observed(9)).is_err());
    }

    #[test]
    fn partial_design_validation() {
        let schema = FeatureSchema::new(
            vec!["A".into()],
            vec![
                FeatureSpec::numeric("x", 0.0, 1.0, "A"),
                FeatureSpec::categorical("c", ["p", "q"], "A"),
            ],
        )
        .unwrap();
        assert!(PartialDesign::new(&schema, vec![Value::Num(2.0), Value::Missing]).is_err());
        assert!(PartialDesign::new(&schema, vec![Value::Missing, Value::Cat("z".into())]).is_err());
        let p = PartialDesign::new(&schema, vec![Value::Missing, Value::Cat("q".into())]).unwrap();
        assert_eq!(p.mask().as_slice(), &[false, true]);
        assert!(PartialDesign::from_named(&schema, [("nope", Value::Num(0.1))]).is_err());
    }
}
