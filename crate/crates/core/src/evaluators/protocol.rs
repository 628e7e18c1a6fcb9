//! Line-delimited JSON messages exchanged with external evaluators.
//!
//! ```text
//! -> {"type":"hello","version":1}
//! <- {"type":"hello","version":1,"capabilities":["mlp","cnn"]}
//! -> {"type":"evaluate","id":1,"config":{"kind":"mlp",...},"epochs":5,"seed":7}
//! <- {"type":"result","id":1,"best_val_acc":0.93,"t_tr_sec":0.8,"n_params":7850}
//! <- {"type":"error","id":1,"reason":"out of memory"}
//! ```
//!
//! One message per line. Config values are the strings of the flat text
//! encoding, in encoding order. Unknown fields are ignored. A result may
//! carry a `digest` of the network it built.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DatasetDescriptor;
use crate::config::encoding::{decode_fields, encode_fields, keys_for, EncodingError};
use crate::config::{Config, ProblemKind};

pub const PROTOCOL_VERSION: u32 = 1;

/// Ordered string-valued config object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireConfig(pub Vec<(String, String)>);

impl WireConfig {
    pub fn from_config(config: &Config) -> Self {
        WireConfig(encode_fields(config).into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Decodes by key, so the sender's field order does not matter.
    pub fn to_config(&self) -> Result<Config, EncodingError> {
        let kind: ProblemKind = self
            .get("kind")
            .ok_or(EncodingError::Missing("kind"))?
            .parse()
            .map_err(|reason| EncodingError::Value { key: "kind", reason })?;
        let keys = keys_for(kind);
        if let Some((extra, _)) = self.0.iter().find(|(k, _)| !keys.contains(&k.as_str())) {
            return Err(EncodingError::Trailing(extra.clone()));
        }
        let mut pairs = Vec::with_capacity(keys.len());
        for &key in keys {
            let value = self.get(key).ok_or(EncodingError::Missing(key))?;
            pairs.push((key.to_string(), value.to_string()));
        }
        decode_fields(&pairs)
    }
}

impl Serialize for WireConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for WireConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Pairs;

        impl<'de> Visitor<'de> for Pairs {
            type Value = WireConfig;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of string values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<WireConfig, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(WireConfig(pairs))
            }
        }

        deserializer.deserialize_map(Pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        capabilities: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<DatasetDescriptor>,
    },
    Evaluate {
        id: u64,
        config: WireConfig,
        epochs: u32,
        seed: u64,
    },
    Result {
        id: u64,
        best_val_acc: f64,
        t_tr_sec: f64,
        n_params: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        digest: Option<String>,
    },
    Error {
        id: u64,
        reason: String,
    },
}

impl Message {
    pub fn hello() -> Self {
        Message::Hello { version: PROTOCOL_VERSION, capabilities: Vec::new(), dataset: None }
    }

    /// One line of JSON without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}
