//! The four session-pair scoring methods behind one interface.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{digraph_samples, sample_map_similarity, DigraphSampleMap};
use crate::features::{extract, FeatureSet};
use crate::nn::{embed_similarity_with_tau, Embedding, Network};
use crate::session::{SessionRecord, ValidationPolicy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "keystroke")]
    KeystrokeTTest,
    #[serde(rename = "deep-keystroke")]
    DeepKeystroke,
    #[serde(rename = "deep-mouse")]
    DeepMouse,
    #[serde(rename = "deep-keystroke+mouse")]
    DeepCombined,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::KeystrokeTTest, Method::DeepKeystroke, Method::DeepMouse, Method::DeepCombined];
    pub const DEEP: [Method; 3] = [Method::DeepKeystroke, Method::DeepMouse, Method::DeepCombined];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::KeystrokeTTest => "keystroke",
            Method::DeepKeystroke => "deep-keystroke",
            Method::DeepMouse => "deep-mouse",
            Method::DeepCombined => "deep-keystroke+mouse",
        }
    }

    /// Input configuration of the deep methods.
    pub fn feature_set(self) -> Option<FeatureSet> {
        match self {
            Method::KeystrokeTTest => None,
            Method::DeepKeystroke => Some(FeatureSet::Keystroke),
            Method::DeepMouse => Some(FeatureSet::Mouse),
            Method::DeepCombined => Some(FeatureSet::Combined),
        }
    }

    pub fn for_feature_set(set: FeatureSet) -> Method {
        match set {
            FeatureSet::Keystroke => Method::DeepKeystroke,
            FeatureSet::Mouse => Method::DeepMouse,
            FeatureSet::Combined => Method::DeepCombined,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown method {s:?}")))
    }
}

/// What a session is reduced to before pairwise scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prepared {
    Embedding(Embedding),
    Digraphs(DigraphSampleMap),
}

/// Prepares sessions and scores prepared pairs.
pub trait Scorer {
    fn method(&self) -> Method;

    /// Fails when the session lacks the data the method needs.
    fn prepare(&self, s: &SessionRecord) -> Result<Prepared>;

    /// `None` when the pair cannot be scored (for example too few shared
    /// digraphs for the t-test).
    fn compare(&self, a: &Prepared, b: &Prepared) -> Option<f64>;

    /// The data requirements `prepare` applies.
    fn policy(&self) -> ValidationPolicy {
        ValidationPolicy::default()
    }
}

/// A method with whatever it needs: nothing for the t-test, a trained
/// network for the deep methods.
#[derive(Clone, Debug)]
pub struct SessionScorer {
    method: Method,
    network: Option<Network>,
    policy: ValidationPolicy,
}

impl SessionScorer {
    pub fn ttest(policy: ValidationPolicy) -> Self {
        Self { method: Method::KeystrokeTTest, network: None, policy }
    }

    /// The method is inferred from the network input dimension.
    pub fn deep(network: Network, policy: ValidationPolicy) -> Result<Self> {
        let set = network.feature_set().ok_or(Error::DimensionMismatch {
            expected: FeatureSet::Combined.dim(),
            got: network.config.input_dim,
        })?;
        Ok(Self { method: Method::for_feature_set(set), network: Some(network), policy })
    }

    pub fn network(&self) -> Option<&Network> {
        self.network.as_ref()
    }

    /// Scores a pair of sessions directly.
    pub fn score_sessions(&self, a: &SessionRecord, b: &SessionRecord) -> Result<Option<f64>> {
        Ok(self.compare(&self.prepare(a)?, &self.prepare(b)?))
    }
}

impl Scorer for SessionScorer {
    fn method(&self) -> Method {
        self.method
    }

    fn policy(&self) -> ValidationPolicy {
        self.policy
    }

    fn prepare(&self, s: &SessionRecord) -> Result<Prepared> {
        match (&self.network, self.method.feature_set()) {
            (Some(net), Some(set)) => {
                let raw: Vec<f64> = extract(set, s, &net.vocab, &self.policy)?;
                Ok(Prepared::Embedding(net.embed(&raw)?))
            }
            _ => Ok(Prepared::Digraphs(digraph_samples(s, &self.policy)?)),
        }
    }

    fn compare(&self, a: &Prepared, b: &Prepared) -> Option<f64> {
        match (a, b) {
            (Prepared::Embedding(x), Prepared::Embedding(y)) => {
                let tau = self.network.as_ref().map_or(crate::nn::DEFAULT_TAU, |n| n.config.tau);
                embed_similarity_with_tau(x, y, tau).ok()
            }
            (Prepared::Digraphs(x), Prepared::Digraphs(y)) => sample_map_similarity(x, y).ok(),
            _ => None,
        }
    }
}

/// Human-readable method name list for error messages.
pub fn method_names() -> String {
    let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
    names.join(", ")
}
