//! Concrete game implementations, registered by string id for configs.

pub mod coins;
pub mod rpd;

pub use coins::{coins_game, encode_coins, CoinsGame, CoinsParams, CoinsState};
pub use rpd::{encode_pd, pd_game, PdParams, PdState, RepeatedPd};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment selection for configs and the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum GameChoice {
    Rpd(PdParams),
    Coins(CoinsParams),
}

impl GameChoice {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "rpd" => Ok(GameChoice::Rpd(PdParams::default())),
            "coins" => Ok(GameChoice::Coins(CoinsParams::default())),
            other => Err(Error::Config(format!("unknown game id '{other}'"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            GameChoice::Rpd(_) => "rpd",
            GameChoice::Coins(_) => "coins",
        }
    }
}
