//! eth_getCode over JSON-RPC.

use std::time::Duration;

use serde_json::json;

use super::IngestError;
use crate::disasm::decode_hex;
use crate::model::{Address, Contract, ContractOrigin};

const RPC_TIMEOUT: Duration = Duration::from_secs(30);

/// Fetches deployed code for `address` at the latest block. `"0x"` means the
/// address is a user account, which is a distinct outcome from any transport
/// or server failure.
pub fn fetch_code_rpc(endpoint: &str, address: Address) -> Result<Contract, IngestError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(RPC_TIMEOUT)
        .build()
        .map_err(|e| IngestError::RpcTransport(e.to_string()))?;

    let request = json!({
        "jsonrpc": "2.0",
        "method": "eth_getCode",
        "params": [address.to_text(), "latest"],
        "id": 1,
    });
    let response = client
        .post(endpoint)
        .json(&request)
        .send()
        .map_err(|e| IngestError::RpcTransport(e.to_string()))?;
    let status = response.status();
    if !status.is_success() {
        return Err(IngestError::RpcTransport(format!("HTTP {status}")));
    }
    let body: serde_json::Value = response
        .json()
        .map_err(|e| IngestError::RpcTransport(format!("bad JSON body: {e}")))?;

    if let Some(error) = body.get("error") {
        let code = error.get("code").and_then(|c| c.as_i64()).unwrap_or(0);
        let message = error
            .get("message")
            .and_then(|m| m.as_str())
            .unwrap_or("unknown");
        return Err(IngestError::RpcError(format!("{message} (code {code})")));
    }
    let code_hex = body
        .get("result")
        .and_then(|r| r.as_str())
        .ok_or_else(|| IngestError::RpcError("response has no result field".to_string()))?;
    let bytecode =
        decode_hex(code_hex).map_err(|e| IngestError::RpcError(format!("result: {e}")))?;
    if bytecode.is_empty() {
        return Err(IngestError::NotAContract);
    }
    Ok(Contract::new(
        Some(address),
        bytecode,
        None,
        ContractOrigin::Rpc,
    )?)
}
