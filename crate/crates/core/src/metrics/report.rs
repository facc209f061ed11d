use serde_json::{Map, Value};

/// Ordered metric name/value list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub entries: Vec<(String, Value)>,
}

impl MetricsReport {
    pub fn push(&mut self, key: &str, value: impl Into<Value>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// One `key = value` line per metric.
    pub fn to_key_value(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// A single JSON object, keys in insertion order.
    pub fn to_json(&self) -> String {
        let map: Map<String, Value> = self.entries.iter().cloned().collect();
        Value::Object(map).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        let mut r = MetricsReport::default();
        r.push("s_assoc_temporal", 0.75);
        r.push("num_gt", 3);
        r.push("filter_min_points", Value::Null);
        assert_eq!(
            r.to_key_value(),
            "s_assoc_temporal = 0.75\nnum_gt = 3\nfilter_min_points = null\n"
        );
        assert_eq!(
            r.to_json(),
            r#"{"s_assoc_temporal":0.75,"num_gt":3,"filter_min_points":null}"#
        );
    }
}
