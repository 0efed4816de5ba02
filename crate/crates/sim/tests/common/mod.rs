//! In-process server for driving the simulator over real HTTP.
#![allow(dead_code)]

use std::sync::Arc;

use stocktake_core::Config;
use stocktake_server::{open_engine, serve, AppState, ServerConfig};
use stocktake_sim::SimConfig;
use tempfile::TempDir;
use tokio::net::TcpListener;

pub const ADMIN_TOKEN: &str = "admin-token";

pub struct LocalServer {
    pub url: String,
    pub operator_tokens: Vec<String>,
    pub state: Arc<AppState>,
    pub dir: TempDir,
}

impl LocalServer {
    /// `base` with this server's tokens and `operators` terminals.
    pub fn sim_config(&self, base: SimConfig) -> SimConfig {
        SimConfig {
            admin_token: ADMIN_TOKEN.to_string(),
            operators: self.operator_tokens.len(),
            operator_tokens: self.operator_tokens.clone(),
            ..base
        }
    }
}

pub async fn spawn_server(operators: usize) -> LocalServer {
    let dir = tempfile::tempdir().unwrap();
    let mut creds = format!("{ADMIN_TOKEN},admin,ADMIN\n");
    let operator_tokens: Vec<String> = (1..=operators).map(|i| format!("op-token-{i:02}")).collect();
    for (i, t) in operator_tokens.iter().enumerate() {
        creds.push_str(&format!("{t},op{:02},OPERATOR\n", i + 1));
    }
    let credentials = dir.path().join("credentials.csv");
    std::fs::write(&credentials, creds).unwrap();
    let cfg = ServerConfig {
        credentials,
        primary_log_dir: dir.path().join("primary"),
        mirror_log_dir: dir.path().join("mirror"),
        config: Config::default(),
    };
    let (engine, _) = open_engine(&cfg).unwrap();
    let state = AppState::new(engine, cfg.config);
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve(listener, state.clone()));
    LocalServer {
        url,
        operator_tokens,
        state,
        dir,
    }
}
